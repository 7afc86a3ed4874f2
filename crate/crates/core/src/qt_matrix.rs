//! Quasi-transformation matrices in two dimensions.
//!
//! A matrix `T = (t_ij)` is indexed with the column index `i` first and rows
//! `j` counted from the bottom, so `t_11` sits in the lower-left corner of the
//! printed matrix. Membership requires:
//!
//! (a) all entries sum to 1,
//! (b) every row and column sum is strictly positive,
//! (c) every contiguous submatrix touching the first or last row or column
//!     has nonnegative sum.
//!
//! Column and row sums induce the partition pair used to carve the unit
//! square into cells.

use crate::rational::{format_rational, parse_rational, rat, to_f64, ParseRationalError, Rational};
use num_traits::{One, Signed, Zero};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Line {
    Column,
    Row,
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Line::Column => write!(f, "column"),
            Line::Row => write!(f, "row"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    // An order-1 matrix would make the induced transform the identity,
    // losing fixed-point uniqueness.
    #[error("matrix order must be at least 2")]
    OrderTooSmall,
    #[error("matrix is not square: {0} columns but column {1} has {2} entries")]
    NotSquare(usize, usize, usize),
    #[error("entries sum to {0}, expected 1")]
    SumNotOne(String),
    #[error("{line} {index} has nonpositive sum {}", format_rational(sum))]
    NonpositiveLine {
        line: Line,
        index: usize,
        sum: Rational,
    },
    #[error(
        "boundary submatrix columns {}..={} rows {}..={} has negative sum {}",
        corners.0, corners.1, corners.2, corners.3, format_rational(sum)
    )]
    NegativeBoundarySubmatrix {
        /// (first column, last column, first row, last row), rows from the bottom.
        corners: (usize, usize, usize, usize),
        sum: Rational,
    },
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
}

/// The partition pair induced by column sums (`p`) and row sums (`q`).
/// Both run strictly increasing from 0 to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPair {
    p: Vec<Rational>,
    q: Vec<Rational>,
    p_f64: Vec<f64>,
    q_f64: Vec<f64>,
}

impl PartitionPair {
    fn new(p: Vec<Rational>, q: Vec<Rational>) -> Self {
        let p_f64 = p.iter().map(to_f64).collect();
        let q_f64 = q.iter().map(to_f64).collect();
        PartitionPair { p, q, p_f64, q_f64 }
    }

    pub fn order(&self) -> usize {
        self.p.len() - 1
    }

    /// Breakpoints 0 = p_0 < p_1 < ... < p_m = 1 along the first axis.
    pub fn p(&self) -> &[Rational] {
        &self.p
    }

    pub fn q(&self) -> &[Rational] {
        &self.q
    }

    pub fn p_f64(&self) -> &[f64] {
        &self.p_f64
    }

    pub fn q_f64(&self) -> &[f64] {
        &self.q_f64
    }
}

/// A validated quasi-transformation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QtMatrix2 {
    m: usize,
    /// `entries[(j-1)*m + (i-1)]` is `t_ij`: column `i`, row `j` from the bottom.
    entries: Vec<Rational>,
    /// Inclusive prefix sums over columns <= i and rows <= j, padded with a
    /// zero row and column; index via `(m+1)` stride.
    prefix: Vec<Rational>,
    abs_prefix: Vec<Rational>,
    partitions: PartitionPair,
}

impl QtMatrix2 {
    /// Builds and validates from a grid given column index first: the outer
    /// vector holds columns, each column lists entries bottom-to-top.
    pub fn new(columns: Vec<Vec<Rational>>) -> Result<Self, MatrixError> {
        let m = columns.len();
        if m < 2 {
            return Err(MatrixError::OrderTooSmall);
        }
        for (i, col) in columns.iter().enumerate() {
            if col.len() != m {
                return Err(MatrixError::NotSquare(m, i + 1, col.len()));
            }
        }
        let mut entries = vec![Rational::zero(); m * m];
        for (i, col) in columns.into_iter().enumerate() {
            for (j, t) in col.into_iter().enumerate() {
                entries[j * m + i] = t;
            }
        }
        Self::from_flat(m, entries)
    }

    /// Builds from rows as conventionally printed: top row first, each row
    /// left to right.
    pub fn from_display_rows(rows: Vec<Vec<Rational>>) -> Result<Self, MatrixError> {
        let m = rows.len();
        if m < 2 {
            return Err(MatrixError::OrderTooSmall);
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(MatrixError::NotSquare(m, k + 1, row.len()));
            }
        }
        let mut entries = vec![Rational::zero(); m * m];
        for (k, row) in rows.into_iter().enumerate() {
            let j = m - k; // top display row is the highest row index
            for (i, t) in row.into_iter().enumerate() {
                entries[(j - 1) * m + i] = t;
            }
        }
        Self::from_flat(m, entries)
    }

    fn from_flat(m: usize, entries: Vec<Rational>) -> Result<Self, MatrixError> {
        let stride = m + 1;
        let mut prefix = vec![Rational::zero(); stride * stride];
        let mut abs_prefix = vec![Rational::zero(); stride * stride];
        for i in 1..=m {
            for j in 1..=m {
                let t = &entries[(j - 1) * m + (i - 1)];
                let sum = t + &prefix[(i - 1) * stride + j] + &prefix[i * stride + (j - 1)]
                    - &prefix[(i - 1) * stride + (j - 1)];
                prefix[i * stride + j] = sum;
                let asum = t.abs() + &abs_prefix[(i - 1) * stride + j]
                    + &abs_prefix[i * stride + (j - 1)]
                    - &abs_prefix[(i - 1) * stride + (j - 1)];
                abs_prefix[i * stride + j] = asum;
            }
        }

        // (a) total mass
        let total = &prefix[m * stride + m];
        if !total.is_one() {
            return Err(MatrixError::SumNotOne(format_rational(total)));
        }

        // (b) strictly positive line sums, columns then rows
        for i in 1..=m {
            let sum = &prefix[i * stride + m] - &prefix[(i - 1) * stride + m];
            if !sum.is_positive() {
                return Err(MatrixError::NonpositiveLine {
                    line: Line::Column,
                    index: i,
                    sum,
                });
            }
        }
        for j in 1..=m {
            let sum = &prefix[m * stride + j] - &prefix[m * stride + (j - 1)];
            if !sum.is_positive() {
                return Err(MatrixError::NonpositiveLine {
                    line: Line::Row,
                    index: j,
                    sum,
                });
            }
        }

        // (c) every contiguous block touching the boundary has nonnegative sum
        let block = |i1: usize, i2: usize, j1: usize, j2: usize| -> Rational {
            &prefix[i2 * stride + j2] - &prefix[(i1 - 1) * stride + j2]
                - &prefix[i2 * stride + (j1 - 1)]
                + &prefix[(i1 - 1) * stride + (j1 - 1)]
        };
        for i1 in 1..=m {
            for i2 in i1..=m {
                for j1 in 1..=m {
                    for j2 in j1..=m {
                        if i1 != 1 && j1 != 1 && i2 != m && j2 != m {
                            continue;
                        }
                        let sum = block(i1, i2, j1, j2);
                        if sum.is_negative() {
                            return Err(MatrixError::NegativeBoundarySubmatrix {
                                corners: (i1, i2, j1, j2),
                                sum,
                            });
                        }
                    }
                }
            }
        }

        // Conditions (a)-(c) confine every entry to [-1/3, 1]; sanity only.
        debug_assert!(entries
            .iter()
            .all(|t| *t >= rat(-1, 3) && *t <= Rational::one()));

        let p: Vec<Rational> = (0..=m).map(|i| prefix[i * stride + m].clone()).collect();
        let q: Vec<Rational> = (0..=m).map(|j| prefix[m * stride + j].clone()).collect();
        Ok(QtMatrix2 {
            m,
            entries,
            prefix,
            abs_prefix,
            partitions: PartitionPair::new(p, q),
        })
    }

    pub fn order(&self) -> usize {
        self.m
    }

    /// Entry `t_ij`, 1-based, column first, rows from the bottom.
    pub fn entry(&self, i: usize, j: usize) -> &Rational {
        assert!(
            (1..=self.m).contains(&i) && (1..=self.m).contains(&j),
            "cell index ({i},{j}) outside 1..={}",
            self.m
        );
        &self.entries[(j - 1) * self.m + (i - 1)]
    }

    /// Sum of all entries with column <= i and row <= j; indices may be 0.
    pub fn prefix_sum(&self, i: usize, j: usize) -> &Rational {
        &self.prefix[i * (self.m + 1) + j]
    }

    /// Same prefix over absolute values.
    pub fn abs_prefix_sum(&self, i: usize, j: usize) -> &Rational {
        &self.abs_prefix[i * (self.m + 1) + j]
    }

    pub fn column_sum(&self, i: usize) -> Rational {
        self.prefix_sum(i, self.m) - self.prefix_sum(i - 1, self.m)
    }

    pub fn row_sum(&self, j: usize) -> Rational {
        self.prefix_sum(self.m, j) - self.prefix_sum(self.m, j - 1)
    }

    pub fn partitions(&self) -> &PartitionPair {
        &self.partitions
    }

    /// True when some entry is negative, i.e. the induced fixed point is a
    /// proper quasi-copula rather than a copula.
    pub fn is_proper(&self) -> bool {
        self.entries.iter().any(|t| t.is_negative())
    }

    /// Cells in (column, row) lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), &Rational)> {
        let m = self.m;
        (1..=m).flat_map(move |i| (1..=m).map(move |j| ((i, j), self.entry(i, j))))
    }

    pub fn nonzero_cells(&self) -> Vec<(usize, usize)> {
        self.cells()
            .filter(|(_, t)| !t.is_zero())
            .map(|(c, _)| c)
            .collect()
    }

    /// Rows as conventionally printed (top first, left to right).
    pub fn display_rows(&self) -> Vec<Vec<Rational>> {
        (0..self.m)
            .map(|k| {
                let j = self.m - k;
                (1..=self.m).map(|i| self.entry(i, j).clone()).collect()
            })
            .collect()
    }

    /// Checks whether every nonzero cell has matching column and row sums,
    /// which makes the induced support maps similarities with ratio equal to
    /// the shared line sum.
    pub fn self_similarity(&self) -> SelfSimilarity {
        let mut ratios = Vec::new();
        for ((i, j), t) in self.cells() {
            if t.is_zero() {
                continue;
            }
            let w = self.column_sum(i);
            let h = self.row_sum(j);
            if w != h {
                return SelfSimilarity {
                    holds: false,
                    ratios: Vec::new(),
                };
            }
            ratios.push(w);
        }
        SelfSimilarity {
            holds: true,
            ratios,
        }
    }

    /// The order-3 matrix with mass 1/3 on the axis-aligned plus shape and
    /// -1/3 in the center.
    pub fn t0() -> Self {
        let r = |n, d| rat(n, d);
        QtMatrix2::from_display_rows(vec![
            vec![r(0, 1), r(1, 3), r(0, 1)],
            vec![r(1, 3), r(-1, 3), r(1, 3)],
            vec![r(0, 1), r(1, 3), r(0, 1)],
        ])
        .expect("canonical matrix is valid")
    }

    /// The order-4 one-parameter family: mass 1-r in the lower-left cell and
    /// a 3x3 block (negative center) in the opposite corner. Requires
    /// 0 < r < 1.
    pub fn tr(r: &Rational) -> Result<Self, MatrixError> {
        if !r.is_positive() || *r >= Rational::one() {
            return Err(MatrixError::ParameterOutOfRange(format!(
                "family parameter must satisfy 0 < r < 1, got {}",
                format_rational(r)
            )));
        }
        let z = Rational::zero;
        let r15 = r / rat_i(15);
        let r5 = r / rat_i(5);
        let top = vec![z(), r15.clone(), r5.clone(), r15.clone()];
        let mid = vec![z(), r5.clone(), -&r15, r5.clone()];
        let bottom = vec![Rational::one() - r, z(), z(), z()];
        QtMatrix2::from_display_rows(vec![top.clone(), mid, top, bottom])
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("order {}\n", self.m);
        for row in self.display_rows() {
            let line: Vec<String> = row.iter().map(format_rational).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| TextError::BadHeader(String::new()))?;
        let m: usize = header
            .strip_prefix("order ")
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| TextError::BadHeader(header.to_owned()))?;
        let mut rows = Vec::with_capacity(m);
        for (k, line) in lines.by_ref().take(m).enumerate() {
            let mut row = Vec::with_capacity(m);
            for token in line.split_whitespace() {
                row.push(parse_rational(token).map_err(|source| TextError::BadToken {
                    line: k + 2,
                    source,
                })?);
            }
            if row.len() != m {
                return Err(TextError::WrongRowLength {
                    line: k + 2,
                    expected: m,
                    got: row.len(),
                });
            }
            rows.push(row);
        }
        if rows.len() != m {
            return Err(TextError::WrongRowCount {
                expected: m,
                got: rows.len(),
            });
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(TextError::TrailingContent);
        }
        Ok(QtMatrix2::from_display_rows(rows)?)
    }
}

fn rat_i(n: i64) -> Rational {
    crate::rational::rat_int(n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfSimilarity {
    pub holds: bool,
    /// Contraction ratio of each nonzero cell, in (column, row) order.
    /// Empty unless `holds`.
    pub ratios: Vec<Rational>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("expected header line `order <m>`, got `{0}`")]
    BadHeader(String),
    #[error("expected {expected} rows, got {got}")]
    WrongRowCount { expected: usize, got: usize },
    #[error("line {line}: expected {expected} entries, got {got}")]
    WrongRowLength {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {source}")]
    BadToken {
        line: usize,
        source: ParseRationalError,
    },
    #[error("unexpected content after matrix rows")]
    TrailingContent,
    #[error(transparent)]
    Invalid(#[from] MatrixError),
}
