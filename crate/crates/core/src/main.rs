//! `qcop`: validate, evaluate and render quasi-transformation matrices.
//!
//! Exit codes: 0 on success, 2 when an input fails quasi-copula validation
//! (matrix membership or the sampled axioms), 1 for usage and IO problems.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use quasicopula::eval2d::{write_grid_csv, FixedPointEvaluator, Rect};
use quasicopula::ifs_support::{box_counting_estimate, family_r_of_s, family_s_of_r, solve_moran};
use quasicopula::multi_nd::{lattice_eval, make_cube_matrix, make_step_matrix, MultiMatrix};
use quasicopula::qt_matrix::QtMatrix2;
use quasicopula::rational::{
    format_rational, parse_decimal, parse_rational, sig17, to_f64, Rational,
};
use quasicopula::render::{encode_pgm, encode_ppm, rasterize_support, read_pnm};

#[derive(Parser)]
#[command(
    name = "qcop",
    version,
    about = "Quasi-transformation matrices: validation, fixed-point evaluation, fractal supports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a matrix file (2-D text or n-dimensional JSON) for membership.
    Validate { matrix: PathBuf },
    /// Evaluate the fixed point of a 2-D matrix at a point or on a grid.
    Eval {
        matrix: PathBuf,
        /// Point "u,v" with rational (p/q) or decimal coordinates.
        #[arg(long)]
        point: Option<String>,
        /// Recursion cutoff for the floating evaluation.
        #[arg(long)]
        tol: Option<f64>,
        /// Export an n-by-n value grid as CSV instead of a single point.
        #[arg(long)]
        grid: Option<usize>,
        /// Output path for --grid.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Induced volume of an axis-aligned rectangle "u1,u2,v1,v2".
    Volume {
        matrix: PathBuf,
        #[arg(long)]
        rect: String,
    },
    /// Rasterize the depth-l support into a PGM or PPM image.
    Support {
        matrix: PathBuf,
        #[arg(long)]
        depth: u32,
        #[arg(long)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fractal dimension estimators.
    Dim {
        #[command(subcommand)]
        which: DimCommand,
    },
    /// Write a canonical matrix: t0, tr:<r>, step:<n>,<r> or cube:<n>.
    Make {
        family: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact fixed-point values of an n-dimensional matrix on the depth-k lattice.
    Lattice {
        matrix: PathBuf,
        #[arg(long)]
        depth: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the quasi-copula axioms of a 2-D fixed point.
    Axioms {
        matrix: PathBuf,
        #[arg(long)]
        samples: u64,
        #[arg(long)]
        seed: u64,
        /// Violation threshold; defaults to twice the evaluator tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Subcommand)]
enum DimCommand {
    /// Solve sum(c_i^s) = 1 for the similarity dimension.
    Moran {
        /// Comma-separated contraction ratios in ]0,1[.
        #[arg(long)]
        ratios: String,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// The one-parameter family curve s(r) and its inverse.
    Family {
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        s: Option<String>,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Box-counting slope of a mask image at the given scales.
    Box {
        #[arg(long)]
        mask: PathBuf,
        /// Comma-separated box sides as fractions of the unit square.
        #[arg(long)]
        scales: String,
        #[arg(long)]
        json: bool,
    },
}

/// Exit-code carrier: validation failures are distinct from usage/IO.
enum CliError {
    Invalid(String),
    Usage(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Usage(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Usage(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn invalid<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Invalid(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

enum AnyMatrix {
    Two(QtMatrix2),
    Nd(MultiMatrix),
}

/// Files starting with '{' hold n-dimensional JSON, anything else the 2-D
/// text format.
fn load_any_matrix(path: &Path) -> Result<AnyMatrix, CliError> {
    let text = read_file(path)?;
    if text.trim_start().starts_with('{') {
        MultiMatrix::from_json(&text).map(AnyMatrix::Nd).map_err(invalid)
    } else {
        QtMatrix2::from_text(&text).map(AnyMatrix::Two).map_err(invalid)
    }
}

fn load_matrix_2d(path: &Path) -> Result<QtMatrix2, CliError> {
    match load_any_matrix(path)? {
        AnyMatrix::Two(m) => Ok(m),
        AnyMatrix::Nd(_) => Err(usage(format!(
            "{}: this subcommand needs a 2-D matrix",
            path.display()
        ))),
    }
}

/// Rational flag values; decimals convert exactly but draw a warning since
/// the literal may itself be a truncation.
fn parse_rational_flag(text: &str, flag: &str) -> Result<Rational, CliError> {
    let text = text.trim();
    if text.contains('.') {
        let value = parse_decimal(text)
            .map_err(|e| usage(format!("bad value '{text}' for {flag}: {e}")))?;
        eprintln!(
            "warning: {flag} value '{text}' read as {}; pass p/q if the decimal was a truncation",
            format_rational(&value)
        );
        Ok(value)
    } else {
        parse_rational(text).map_err(|e| usage(format!("bad value '{text}' for {flag}: {e}")))
    }
}

fn parse_rational_list(text: &str, flag: &str, want: usize) -> Result<Vec<Rational>, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != want {
        return Err(usage(format!(
            "{flag} wants {want} comma-separated values, got {}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| parse_rational_flag(p, flag))
        .collect()
}

fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("bad value '{p}' for {flag}")))
        })
        .collect()
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { matrix } => {
            match load_any_matrix(&matrix)? {
                AnyMatrix::Two(m) => {
                    println!("valid, {}", if m.is_proper() { "proper" } else { "copula" });
                    println!("order {}", m.order());
                }
                AnyMatrix::Nd(m) => {
                    println!("valid, {}", if m.is_proper() { "proper" } else { "copula" });
                    let shape: Vec<String> = m.shape().iter().map(|s| s.to_string()).collect();
                    println!("shape {}", shape.join("x"));
                }
            }
            Ok(())
        }
        Command::Eval {
            matrix,
            point,
            tol,
            grid,
            out,
        } => {
            let m = load_matrix_2d(&matrix)?;
            let evaluator = match tol {
                Some(t) => FixedPointEvaluator::new(m, t, 64).map_err(usage)?,
                None => FixedPointEvaluator::with_defaults(m),
            };
            match (point, grid) {
                (Some(point), None) => {
                    let coords = parse_rational_list(&point, "--point", 2)?;
                    let (u, v) = (to_f64(&coords[0]), to_f64(&coords[1]));
                    let result = evaluator.eval(u, v).map_err(usage)?;
                    println!("value = {}", sig17(result.value));
                    println!("error_bound = {}", sig17(result.error_bound));
                    if let Some(exact) = evaluator.eval_exact(&coords[0], &coords[1]).map_err(usage)? {
                        println!("exact = {}", format_rational(&exact));
                    }
                    Ok(())
                }
                (None, Some(n)) => {
                    let out = out.ok_or_else(|| usage("--grid needs --out for the CSV"))?;
                    if n < 2 {
                        return Err(usage("--grid wants at least 2 points per side"));
                    }
                    let mut bytes = Vec::new();
                    write_grid_csv(&evaluator, n, &mut bytes).map_err(usage)?;
                    write_file(&out, &bytes)?;
                    println!("wrote {}", out.display());
                    Ok(())
                }
                _ => Err(usage("eval wants exactly one of --point or --grid")),
            }
        }
        Command::Volume { matrix, rect } => {
            let m = load_matrix_2d(&matrix)?;
            let sides = parse_rational_list(&rect, "--rect", 4)?;
            let rect = Rect::new(
                sides[0].clone(),
                sides[1].clone(),
                sides[2].clone(),
                sides[3].clone(),
            )
            .map_err(usage)?;
            let evaluator = FixedPointEvaluator::with_defaults(m);
            let estimate = evaluator.volume(&rect).map_err(usage)?;
            println!("volume = {}", sig17(estimate.value));
            println!("error_bound = {}", sig17(estimate.error_bound));
            if let Some(exact) = estimate.exact {
                println!("exact = {}", format_rational(&exact));
            }
            Ok(())
        }
        Command::Support {
            matrix,
            depth,
            res,
            out,
        } => {
            let m = load_matrix_2d(&matrix)?;
            let mask = rasterize_support(&m, depth, res).map_err(usage)?;
            let bytes = match out.extension().and_then(|e| e.to_str()) {
                Some("pgm") => encode_pgm(&mask),
                Some("ppm") => encode_ppm(&mask),
                _ => return Err(usage("--out wants a .pgm or .ppm path")),
            };
            write_file(&out, &bytes)?;
            let (_, positive, negative, mixed) = mask.counts();
            println!("occupied = {}", positive + negative + mixed);
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Dim { which } => run_dim(which),
        Command::Make { family, out } => {
            let bytes = make_family(&family)?;
            write_file(&out, &bytes)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Lattice { matrix, depth, out } => {
            let m = match load_any_matrix(&matrix)? {
                AnyMatrix::Nd(m) => m,
                AnyMatrix::Two(m) => MultiMatrix::from_2d(&m),
            };
            let lattice = lattice_eval(&m, depth).map_err(usage)?;
            write_file(&out, lattice.to_json().as_bytes())?;
            let shape: Vec<String> = lattice.shape().iter().map(|s| s.to_string()).collect();
            println!("lattice points = {}", shape.join("x"));
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Axioms {
            matrix,
            samples,
            seed,
            tol,
        } => {
            let m = load_matrix_2d(&matrix)?;
            let evaluator = FixedPointEvaluator::with_defaults(m);
            if samples == 0 {
                return Err(usage("--samples wants a positive count"));
            }
            let tolerance = tol.unwrap_or(2.0 * evaluator.tolerance());
            let report = quasicopula::eval2d::axiom_report(&evaluator, samples, seed, tolerance)
                .map_err(usage)?;
            println!("samples = {}", report.samples);
            println!("seed = {}", report.seed);
            println!("tolerance = {}", sig17(report.tolerance));
            println!("boundary_worst = {}", sig17(report.boundary_worst));
            println!("monotonicity_worst = {}", sig17(report.monotonicity_worst));
            println!("lipschitz_worst = {}", sig17(report.lipschitz_worst));
            if report.passes() {
                println!("verdict = pass");
                Ok(())
            } else {
                println!("verdict = fail");
                Err(invalid(format!(
                    "axiom violation beyond {} (worst {})",
                    sig17(report.tolerance),
                    sig17(report.worst())
                )))
            }
        }
    }
}

fn run_dim(command: DimCommand) -> Result<(), CliError> {
    match command {
        DimCommand::Moran { ratios, tol, json } => {
            let ratios = parse_f64_list(&ratios, "--ratios")?;
            let report = solve_moran(&ratios, tol.unwrap_or(1e-12)).map_err(usage)?;
            if json {
                println!("{}", serde_json::to_string(&report).map_err(usage)?);
            } else {
                println!("s = {}", sig17(report.s));
                println!("residual = {}", sig17(report.residual));
                println!(
                    "bracket = [{}, {}]",
                    sig17(report.bracket.0),
                    sig17(report.bracket.1)
                );
                println!("iterations = {}", report.iterations);
            }
            Ok(())
        }
        DimCommand::Family { r, s, n, tol } => {
            let tol = tol.unwrap_or(1e-12);
            // Residuals are reported against the defining equation
            // (1-r)^s + 3^n (r/3)^s = 1.
            let g = |r: f64, s: f64| {
                (1.0 - r).powf(s) + 3f64.powi(n as i32) * (r / 3.0).powf(s) - 1.0
            };
            match (r, s) {
                (Some(r), None) => {
                    let r = to_f64(&parse_rational_flag(&r, "--r")?);
                    let s = family_s_of_r(r, n as u32, tol).map_err(usage)?;
                    println!("s = {}", sig17(s));
                    println!("residual = {}", sig17(g(r, s).abs()));
                    Ok(())
                }
                (None, Some(s)) => {
                    let s = to_f64(&parse_rational_flag(&s, "--s")?);
                    let r = family_r_of_s(s, n as u32, tol).map_err(usage)?;
                    println!("r = {}", sig17(r));
                    println!("residual = {}", sig17(g(r, s).abs()));
                    Ok(())
                }
                _ => Err(usage("dim family wants exactly one of --r or --s")),
            }
        }
        DimCommand::Box { mask, scales, json } => {
            let bytes = fs::read(&mask).map_err(|e| usage(format!("{}: {e}", mask.display())))?;
            let image = read_pnm(&bytes).map_err(usage)?;
            let grid = image.occupancy_from_nonwhite().map_err(usage)?;
            let scales = parse_f64_list(&scales, "--scales")?;
            let fit = box_counting_estimate(&grid, &scales).map_err(usage)?;
            if json {
                println!("{}", serde_json::to_string(&fit).map_err(usage)?);
            } else {
                println!("dim = {}", sig17(fit.dim));
                println!("fit_residual = {}", sig17(fit.fit_residual));
                let mut counts = String::new();
                for (i, c) in fit.counts.iter().enumerate() {
                    if i > 0 {
                        counts.push_str(", ");
                    }
                    let _ = write!(counts, "{c}");
                }
                println!("counts = [{counts}]");
            }
            Ok(())
        }
    }
}

fn make_family(family: &str) -> Result<Vec<u8>, CliError> {
    let (name, params) = match family.split_once(':') {
        Some((name, params)) => (name, Some(params)),
        None => (family, None),
    };
    match (name, params) {
        ("t0", None) => Ok(QtMatrix2::t0().to_text().into_bytes()),
        ("tr", Some(p)) => {
            let r = parse_rational_flag(p, "tr:<r>")?;
            let m = QtMatrix2::tr(&r).map_err(usage)?;
            Ok(m.to_text().into_bytes())
        }
        ("step", Some(p)) => {
            let (n, r) = p
                .split_once(',')
                .ok_or_else(|| usage("step wants step:<n>,<r>"))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| usage(format!("bad dimension '{n}' for step")))?;
            let r = parse_rational_flag(r, "step:<n>,<r>")?;
            let m = make_step_matrix(n, &r).map_err(usage)?;
            Ok(m.to_json().into_bytes())
        }
        ("cube", Some(p)) => {
            let n: usize = p
                .trim()
                .parse()
                .map_err(|_| usage(format!("bad dimension '{p}' for cube")))?;
            let m = make_cube_matrix(n).map_err(usage)?;
            Ok(m.to_json().into_bytes())
        }
        _ => Err(usage(format!(
            "unknown family '{family}'; use t0, tr:<r>, step:<n>,<r> or cube:<n>"
        ))),
    }
}
