//! Evaluation engine for matrix-generated bivariate quasi-copulas.
//!
//! Inside cell `R_ij = [p_{i-1}, p_i] x [q_{j-1}, q_j]` the transform acts as
//!
//! ```text
//! T(Q)(u, v) = A_ij + B_ij x + C_ij y + t_ij Q(x, y)
//! ```
//!
//! where `(x, y)` are the cell-local coordinates, `A_ij` the total mass
//! strictly below and to the left of the cell, `B_ij` the column mass below
//! it, and `C_ij` the row mass to its left.  The fixed point `Q_T` is
//! evaluated by descending this recursion: each level scales the remaining
//! recursive term by the `t` of the cell it lands in, so once the running
//! product `|prod t|` falls under the requested tolerance any quasi-copula
//! may stand in for the tail.  We substitute the product copula at the
//! rescaled point and report the achieved `|prod t|` as the error bound.
//! Descents that hit an axis (local coordinate 0 or 1) or a zero-mass cell
//! terminate exactly; at dyadic-in-the-partition lattice corners the same
//! descent runs in exact rational arithmetic.
//!
//! Float results are binary64 and reported bounds ignore ulp-level rounding.

use std::io;

use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::qt_matrix::{PartitionPair, QtMatrix2};
use crate::rational::{sig17, to_f64, Rational};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("point ({u}, {v}) lies outside the unit square")]
    OutOfDomain { u: f64, v: f64 },
    #[error("rectangle [{u1}, {u2}] x [{v1}, {v2}] must be ordered and inside the unit square")]
    BadRectangle { u1: f64, u2: f64, v1: f64, v2: f64 },
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("max depth must be at least 1")]
    ZeroMaxDepth,
    #[error("cell path must contain at least one cell")]
    EmptyPath,
    #[error("cell index ({i}, {j}) outside 1..={m}")]
    CellOutOfRange { i: usize, j: usize, m: usize },
    #[error("cell path must end in a zero-mass cell")]
    PathMassNonzero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTag {
    Pi,
    Min,
    W,
    Transform,
    FixedPoint,
    Custom,
}

impl std::fmt::Display for EvalTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalTag::Pi => "pi",
            EvalTag::Min => "min",
            EvalTag::W => "w",
            EvalTag::Transform => "transform",
            EvalTag::FixedPoint => "fixed-point",
            EvalTag::Custom => "custom",
        })
    }
}

/// Anything that can be evaluated pointwise on the unit square.
///
/// `point_exact` is an optional fast path: `Some` means the returned rational
/// is the mathematically exact value, `None` means the implementation cannot
/// certify exactness at that point and the caller should fall back to floats.
pub trait Evaluable {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError>;

    /// Value together with a guaranteed absolute error bound.
    fn point_with_bound(&self, u: f64, v: f64) -> Result<(f64, f64), EvalError> {
        self.point(u, v).map(|x| (x, 0.0))
    }

    fn point_exact(&self, _u: &Rational, _v: &Rational) -> Option<Rational> {
        None
    }

    fn tag(&self) -> EvalTag;
}

fn check_point(u: f64, v: f64) -> Result<(), EvalError> {
    if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(EvalError::OutOfDomain { u, v })
    }
}

fn check_point_exact(u: &Rational, v: &Rational) -> Result<(), EvalError> {
    let in_unit = |x: &Rational| !x.is_negative() && *x <= Rational::one();
    if in_unit(u) && in_unit(v) {
        Ok(())
    } else {
        Err(EvalError::OutOfDomain {
            u: to_f64(u),
            v: to_f64(v),
        })
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Product copula `uv`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Pi;

impl Evaluable for Pi {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        check_point(u, v)?;
        Ok(u * v)
    }

    fn point_exact(&self, u: &Rational, v: &Rational) -> Option<Rational> {
        Some(u * v)
    }

    fn tag(&self) -> EvalTag {
        EvalTag::Pi
    }
}

/// Upper Frechet bound `min(u, v)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MinCopula;

impl Evaluable for MinCopula {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        check_point(u, v)?;
        Ok(u.min(v))
    }

    fn point_exact(&self, u: &Rational, v: &Rational) -> Option<Rational> {
        Some(if u <= v { u.clone() } else { v.clone() })
    }

    fn tag(&self) -> EvalTag {
        EvalTag::Min
    }
}

/// Lower Frechet bound `max(u + v - 1, 0)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WCopula;

impl Evaluable for WCopula {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        check_point(u, v)?;
        Ok((u + v - 1.0).max(0.0))
    }

    fn point_exact(&self, u: &Rational, v: &Rational) -> Option<Rational> {
        let s = u + v - Rational::one();
        Some(if s.is_negative() { Rational::zero() } else { s })
    }

    fn tag(&self) -> EvalTag {
        EvalTag::W
    }
}

/// Wraps a plain closure so ad-hoc surfaces can run through the axiom audit.
pub struct FnEval<F: Fn(f64, f64) -> f64> {
    f: F,
}

impl<F: Fn(f64, f64) -> f64> FnEval<F> {
    pub fn new(f: F) -> Self {
        FnEval { f }
    }
}

impl<F: Fn(f64, f64) -> f64> Evaluable for FnEval<F> {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        check_point(u, v)?;
        Ok((self.f)(u, v))
    }

    fn tag(&self) -> EvalTag {
        EvalTag::Custom
    }
}

/// Index of the half-open cell containing `x`; `x = 1` closes into the last.
fn locate_f64(breaks: &[f64], x: f64) -> usize {
    let m = breaks.len() - 1;
    breaks[1..m].partition_point(|p| *p <= x) + 1
}

fn locate_exact(breaks: &[Rational], x: &Rational) -> usize {
    let m = breaks.len() - 1;
    breaks[1..m].partition_point(|p| p <= x) + 1
}

/// Cell indices for a point, half-open convention with closure at 1.
pub fn locate_cell(partitions: &PartitionPair, u: f64, v: f64) -> Result<(usize, usize), EvalError> {
    check_point(u, v)?;
    Ok((
        locate_f64(partitions.p_f64(), u),
        locate_f64(partitions.q_f64(), v),
    ))
}

pub fn locate_cell_exact(
    partitions: &PartitionPair,
    u: &Rational,
    v: &Rational,
) -> Result<(usize, usize), EvalError> {
    check_point_exact(u, v)?;
    Ok((locate_exact(partitions.p(), u), locate_exact(partitions.q(), v)))
}

/// Float tables derived once per matrix so the descent stays allocation-free.
#[derive(Debug, Clone)]
struct Cache {
    m: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    wu: Vec<f64>,
    wv: Vec<f64>,
    t: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Cache {
    fn new(mx: &QtMatrix2) -> Self {
        let m = mx.order();
        let pp = mx.partitions();
        let width = |br: &[Rational], k: usize| to_f64(&(&br[k] - &br[k - 1]));
        let wu = (1..=m).map(|i| width(pp.p(), i)).collect();
        let wv = (1..=m).map(|j| width(pp.q(), j)).collect();
        let mut t = Vec::with_capacity(m * m);
        let mut a = Vec::with_capacity(m * m);
        let mut b = Vec::with_capacity(m * m);
        let mut c = Vec::with_capacity(m * m);
        for j in 1..=m {
            for i in 1..=m {
                let corner = mx.prefix_sum(i - 1, j - 1);
                t.push(to_f64(mx.entry(i, j)));
                a.push(to_f64(corner));
                b.push(to_f64(&(mx.prefix_sum(i, j - 1) - corner)));
                c.push(to_f64(&(mx.prefix_sum(i - 1, j) - corner)));
            }
        }
        Cache {
            m,
            p: pp.p_f64().to_vec(),
            q: pp.q_f64().to_vec(),
            wu,
            wv,
            t,
            a,
            b,
            c,
        }
    }
}

struct Step {
    x: f64,
    y: f64,
    affine: f64,
    t: f64,
}

fn descend_once(c: &Cache, x: f64, y: f64) -> Step {
    let i = locate_f64(&c.p, x);
    let j = locate_f64(&c.q, y);
    let nx = clamp01((x - c.p[i - 1]) / c.wu[i - 1]);
    let ny = clamp01((y - c.q[j - 1]) / c.wv[j - 1]);
    let k = (j - 1) * c.m + (i - 1);
    Step {
        x: nx,
        y: ny,
        affine: c.a[k] + c.b[k] * nx + c.c[k] * ny,
        t: c.t[k],
    }
}

/// Local coordinates, affine part `A + Bx + Cy`, and mass of one cell step.
fn cell_step_exact(
    mx: &QtMatrix2,
    i: usize,
    j: usize,
    x: &Rational,
    y: &Rational,
) -> (Rational, Rational, Rational, Rational) {
    let pp = mx.partitions();
    let wu = &pp.p()[i] - &pp.p()[i - 1];
    let wv = &pp.q()[j] - &pp.q()[j - 1];
    let nx = (x - &pp.p()[i - 1]) / wu;
    let ny = (y - &pp.q()[j - 1]) / wv;
    let corner = mx.prefix_sum(i - 1, j - 1);
    let b = mx.prefix_sum(i, j - 1) - corner;
    let c = mx.prefix_sum(i - 1, j) - corner;
    let affine = corner + b * &nx + c * &ny;
    (nx, ny, affine, mx.entry(i, j).clone())
}

fn descend_once_exact(
    mx: &QtMatrix2,
    x: &Rational,
    y: &Rational,
) -> (Rational, Rational, Rational, Rational) {
    let pp = mx.partitions();
    let i = locate_exact(pp.p(), x);
    let j = locate_exact(pp.q(), y);
    cell_step_exact(mx, i, j, x, y)
}

/// Boundary value when the point sits on an axis line, where every
/// quasi-copula is pinned by the margin conditions.
fn axis_value(x: f64, y: f64) -> Option<f64> {
    if x == 0.0 || y == 0.0 {
        Some(0.0)
    } else if x == 1.0 {
        Some(y)
    } else if y == 1.0 {
        Some(x)
    } else {
        None
    }
}

fn axis_value_exact(x: &Rational, y: &Rational) -> Option<Rational> {
    if x.is_zero() || y.is_zero() {
        Some(Rational::zero())
    } else if x.is_one() {
        Some(y.clone())
    } else if y.is_one() {
        Some(x.clone())
    } else {
        None
    }
}

/// One application of the transform at a single point.
pub fn apply_transform(
    matrix: &QtMatrix2,
    q: &dyn Evaluable,
    u: f64,
    v: f64,
) -> Result<f64, EvalError> {
    check_point(u, v)?;
    if let Some(val) = axis_value(u, v) {
        return Ok(val);
    }
    let s = descend_once(&Cache::new(matrix), u, v);
    let tail = if s.t == 0.0 { 0.0 } else { s.t * q.point(s.x, s.y)? };
    Ok(clamp01(s.affine + tail))
}

/// Exact-rational variant; `None` when the base cannot certify exactness at
/// the rescaled point.
pub fn apply_transform_exact(
    matrix: &QtMatrix2,
    q: &dyn Evaluable,
    u: &Rational,
    v: &Rational,
) -> Result<Option<Rational>, EvalError> {
    check_point_exact(u, v)?;
    if let Some(val) = axis_value_exact(u, v) {
        return Ok(Some(val));
    }
    let (nx, ny, affine, t) = descend_once_exact(matrix, u, v);
    if t.is_zero() {
        return Ok(Some(affine));
    }
    Ok(q.point_exact(&nx, &ny).map(|qv| affine + t * qv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueWithBound {
    pub value: f64,
    /// Guaranteed absolute error; 0 when the descent terminated exactly.
    pub error_bound: f64,
}

/// Evaluates the unique fixed point of a matrix transform.
#[derive(Debug, Clone)]
pub struct FixedPointEvaluator {
    matrix: QtMatrix2,
    tolerance: f64,
    max_depth: u32,
    cache: Cache,
}

impl FixedPointEvaluator {
    pub const DEFAULT_TOLERANCE: f64 = 1e-12;
    pub const DEFAULT_MAX_DEPTH: u32 = 64;

    pub fn new(matrix: QtMatrix2, tolerance: f64, max_depth: u32) -> Result<Self, EvalError> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(EvalError::BadTolerance(tolerance));
        }
        if max_depth == 0 {
            return Err(EvalError::ZeroMaxDepth);
        }
        let cache = Cache::new(&matrix);
        Ok(FixedPointEvaluator {
            matrix,
            tolerance,
            max_depth,
            cache,
        })
    }

    pub fn with_defaults(matrix: QtMatrix2) -> Self {
        Self::new(matrix, Self::DEFAULT_TOLERANCE, Self::DEFAULT_MAX_DEPTH)
            .expect("default evaluator parameters are valid")
    }

    pub fn matrix(&self) -> &QtMatrix2 {
        &self.matrix
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn eval(&self, u: f64, v: f64) -> Result<ValueWithBound, EvalError> {
        check_point(u, v)?;
        Ok(self.descend(u, v))
    }

    fn descend(&self, u: f64, v: f64) -> ValueWithBound {
        let (mut x, mut y) = (u, v);
        let (mut off, mut acc) = (0.0_f64, 1.0_f64);
        for _ in 0..self.max_depth {
            if let Some(val) = axis_value(x, y) {
                return ValueWithBound {
                    value: clamp01(off + acc * val),
                    error_bound: 0.0,
                };
            }
            if acc.abs() <= self.tolerance {
                break;
            }
            let s = descend_once(&self.cache, x, y);
            off += acc * s.affine;
            acc *= s.t;
            if acc == 0.0 {
                return ValueWithBound {
                    value: clamp01(off),
                    error_bound: 0.0,
                };
            }
            (x, y) = (s.x, s.y);
        }
        // Tail substituted by the product copula at the rescaled point.
        ValueWithBound {
            value: clamp01(off + acc * x * y),
            error_bound: acc.abs(),
        }
    }

    /// Exact value when the descent terminates (axis hit or zero cell)
    /// within `max_depth` levels, as it does at every partition-lattice
    /// corner; `None` otherwise.
    pub fn eval_exact(&self, u: &Rational, v: &Rational) -> Result<Option<Rational>, EvalError> {
        check_point_exact(u, v)?;
        let (mut x, mut y) = (u.clone(), v.clone());
        let mut off = Rational::zero();
        let mut acc = Rational::one();
        for _ in 0..=self.max_depth {
            if let Some(val) = axis_value_exact(&x, &y) {
                return Ok(Some(off + acc * val));
            }
            let (nx, ny, affine, t) = descend_once_exact(&self.matrix, &x, &y);
            off += &acc * &affine;
            acc *= t;
            if acc.is_zero() {
                return Ok(Some(off));
            }
            (x, y) = (nx, ny);
        }
        Ok(None)
    }

    pub fn volume(&self, rect: &Rect) -> Result<VolumeEstimate, EvalError> {
        volume(self, rect)
    }
}

impl Evaluable for FixedPointEvaluator {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        self.eval(u, v).map(|e| e.value)
    }

    fn point_with_bound(&self, u: f64, v: f64) -> Result<(f64, f64), EvalError> {
        self.eval(u, v).map(|e| (e.value, e.error_bound))
    }

    fn point_exact(&self, u: &Rational, v: &Rational) -> Option<Rational> {
        self.eval_exact(u, v).ok().flatten()
    }

    fn tag(&self) -> EvalTag {
        EvalTag::FixedPoint
    }
}

/// `T^steps(base)`, evaluated by unrolling the recursion `steps` levels and
/// then handing the rescaled point to the base.
pub struct IteratedTransform<B: Evaluable> {
    matrix: QtMatrix2,
    base: B,
    steps: u32,
    cache: Cache,
}

impl<B: Evaluable> IteratedTransform<B> {
    pub fn new(matrix: QtMatrix2, base: B, steps: u32) -> Self {
        let cache = Cache::new(&matrix);
        IteratedTransform {
            matrix,
            base,
            steps,
            cache,
        }
    }

    pub fn matrix(&self) -> &QtMatrix2 {
        &self.matrix
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }
}

impl<B: Evaluable> Evaluable for IteratedTransform<B> {
    fn point(&self, u: f64, v: f64) -> Result<f64, EvalError> {
        check_point(u, v)?;
        let (mut x, mut y) = (u, v);
        let (mut off, mut acc) = (0.0_f64, 1.0_f64);
        for _ in 0..self.steps {
            if let Some(val) = axis_value(x, y) {
                return Ok(clamp01(off + acc * val));
            }
            let s = descend_once(&self.cache, x, y);
            off += acc * s.affine;
            acc *= s.t;
            if acc == 0.0 {
                return Ok(clamp01(off));
            }
            (x, y) = (s.x, s.y);
        }
        Ok(clamp01(off + acc * self.base.point(x, y)?))
    }

    fn point_exact(&self, u: &Rational, v: &Rational) -> Option<Rational> {
        check_point_exact(u, v).ok()?;
        let (mut x, mut y) = (u.clone(), v.clone());
        let mut off = Rational::zero();
        let mut acc = Rational::one();
        for _ in 0..self.steps {
            if let Some(val) = axis_value_exact(&x, &y) {
                return Some(off + acc * val);
            }
            let (nx, ny, affine, t) = descend_once_exact(&self.matrix, &x, &y);
            off += &acc * &affine;
            acc *= t;
            if acc.is_zero() {
                return Some(off);
            }
            (x, y) = (nx, ny);
        }
        Some(off + acc * self.base.point_exact(&x, &y)?)
    }

    fn tag(&self) -> EvalTag {
        EvalTag::Transform
    }
}

/// Closed axis-aligned rectangle inside the unit square, corners exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    u1: Rational,
    u2: Rational,
    v1: Rational,
    v2: Rational,
}

impl Rect {
    pub fn new(u1: Rational, u2: Rational, v1: Rational, v2: Rational) -> Result<Self, EvalError> {
        let in_unit = |x: &Rational| !x.is_negative() && *x <= Rational::one();
        if u1 <= u2 && v1 <= v2 && [&u1, &u2, &v1, &v2].into_iter().all(in_unit) {
            Ok(Rect { u1, u2, v1, v2 })
        } else {
            Err(EvalError::BadRectangle {
                u1: to_f64(&u1),
                u2: to_f64(&u2),
                v1: to_f64(&v1),
                v2: to_f64(&v2),
            })
        }
    }

    pub fn unit() -> Self {
        Rect {
            u1: Rational::zero(),
            u2: Rational::one(),
            v1: Rational::zero(),
            v2: Rational::one(),
        }
    }

    pub fn u1(&self) -> &Rational {
        &self.u1
    }

    pub fn u2(&self) -> &Rational {
        &self.u2
    }

    pub fn v1(&self) -> &Rational {
        &self.v1
    }

    pub fn v2(&self) -> &Rational {
        &self.v2
    }

    /// Zero width or height; such rectangles carry volume 0 by definition.
    pub fn is_degenerate(&self) -> bool {
        self.u1 == self.u2 || self.v1 == self.v2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEstimate {
    pub value: f64,
    pub error_bound: f64,
    /// Present when all four corner evaluations terminated exactly.
    pub exact: Option<Rational>,
}

/// Four-corner inclusion-exclusion mass of a rectangle.
pub fn volume(q: &dyn Evaluable, rect: &Rect) -> Result<VolumeEstimate, EvalError> {
    if rect.is_degenerate() {
        return Ok(VolumeEstimate {
            value: 0.0,
            error_bound: 0.0,
            exact: Some(Rational::zero()),
        });
    }
    let corners = [
        (&rect.u1, &rect.v1),
        (&rect.u2, &rect.v1),
        (&rect.u1, &rect.v2),
        (&rect.u2, &rect.v2),
    ];
    let exact: Option<Vec<Rational>> = corners
        .iter()
        .map(|(u, v)| q.point_exact(u, v))
        .collect();
    if let Some(c) = exact {
        let mass = &c[3] - &c[2] - &c[1] + &c[0];
        return Ok(VolumeEstimate {
            value: to_f64(&mass),
            error_bound: 0.0,
            exact: Some(mass),
        });
    }
    let mut vals = [0.0_f64; 4];
    let mut bound = 0.0_f64;
    for (k, (u, v)) in corners.iter().enumerate() {
        let (val, err) = q.point_with_bound(to_f64(u), to_f64(v))?;
        vals[k] = val;
        bound += err;
    }
    Ok(VolumeEstimate {
        value: vals[3] - vals[2] - vals[1] + vals[0],
        error_bound: bound,
        exact: None,
    })
}

/// Nested cell address: step `k` picks cell `(i_k, j_k)` of the partition
/// refined inside the previous step's cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellPath {
    cells: Vec<(usize, usize)>,
}

impl CellPath {
    pub fn new(cells: Vec<(usize, usize)>) -> Result<Self, EvalError> {
        if cells.is_empty() {
            return Err(EvalError::EmptyPath);
        }
        Ok(CellPath { cells })
    }

    pub fn depth(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    fn check_against(&self, matrix: &QtMatrix2) -> Result<(), EvalError> {
        let m = matrix.order();
        for &(i, j) in &self.cells {
            if !(1..=m).contains(&i) || !(1..=m).contains(&j) {
                return Err(EvalError::CellOutOfRange { i, j, m });
            }
        }
        Ok(())
    }
}

/// The rectangle a path addresses, with exact corners.
pub fn path_rect(matrix: &QtMatrix2, path: &CellPath) -> Result<Rect, EvalError> {
    path.check_against(matrix)?;
    let pp = matrix.partitions();
    let mut uoff = Rational::zero();
    let mut uscale = Rational::one();
    let mut voff = Rational::zero();
    let mut vscale = Rational::one();
    for &(i, j) in path.cells() {
        uoff += &uscale * &pp.p()[i - 1];
        uscale *= &pp.p()[i] - &pp.p()[i - 1];
        voff += &vscale * &pp.q()[j - 1];
        vscale *= &pp.q()[j] - &pp.q()[j - 1];
    }
    Rect::new(uoff.clone(), uoff + uscale, voff.clone(), voff + vscale)
}

/// Signed mass the fixed point assigns to the path's rectangle: the product
/// of the visited entries.
pub fn path_mass(matrix: &QtMatrix2, path: &CellPath) -> Result<Rational, EvalError> {
    path.check_against(matrix)?;
    Ok(path
        .cells()
        .iter()
        .fold(Rational::one(), |acc, &(i, j)| acc * matrix.entry(i, j)))
}

/// Exact coefficients of `Q_T(u, v) = g1 + g2 u + g3 v` on a zero-mass cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoefficients {
    gamma1: Rational,
    gamma2: Rational,
    gamma3: Rational,
}

impl AffineCoefficients {
    pub fn gamma1(&self) -> &Rational {
        &self.gamma1
    }

    pub fn gamma2(&self) -> &Rational {
        &self.gamma2
    }

    pub fn gamma3(&self) -> &Rational {
        &self.gamma3
    }

    pub fn gamma_f64(&self) -> (f64, f64, f64) {
        (to_f64(&self.gamma1), to_f64(&self.gamma2), to_f64(&self.gamma3))
    }

    pub fn eval_exact(&self, u: &Rational, v: &Rational) -> Rational {
        &self.gamma1 + &self.gamma2 * u + &self.gamma3 * v
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let (g1, g2, g3) = self.gamma_f64();
        g1 + g2 * u + g3 * v
    }
}

/// Unrolls the recursion along a path whose final cell has zero mass.  On
/// that cell the recursive term vanishes, so the restriction of the fixed
/// point is affine in the original coordinates; the returned coefficients
/// collect the per-level affine pieces mapped back through the inverse cell
/// maps, all in exact arithmetic.
pub fn affine_coefficients(
    matrix: &QtMatrix2,
    path: &CellPath,
) -> Result<AffineCoefficients, EvalError> {
    path.check_against(matrix)?;
    let &(il, jl) = path.cells().last().expect("paths are nonempty");
    if !matrix.entry(il, jl).is_zero() {
        return Err(EvalError::PathMassNonzero);
    }
    let pp = matrix.partitions();
    let mut gamma1 = Rational::zero();
    let mut gamma2 = Rational::zero();
    let mut gamma3 = Rational::zero();
    let mut mass = Rational::one();
    let mut uoff = Rational::zero();
    let mut uscale = Rational::one();
    let mut voff = Rational::zero();
    let mut vscale = Rational::one();
    for &(i, j) in path.cells() {
        uoff += &uscale * &pp.p()[i - 1];
        uscale *= &pp.p()[i] - &pp.p()[i - 1];
        voff += &vscale * &pp.q()[j - 1];
        vscale *= &pp.q()[j] - &pp.q()[j - 1];
        // Local coordinates as affine functions of the original point:
        // x_k = (u - uoff) / uscale.
        let hu = uscale.recip();
        let hv = vscale.recip();
        let gu = -&uoff * &hu;
        let gv = -&voff * &hv;
        let corner = matrix.prefix_sum(i - 1, j - 1);
        let b = matrix.prefix_sum(i, j - 1) - corner;
        let c = matrix.prefix_sum(i - 1, j) - corner;
        gamma1 += &mass * (corner + &b * gu + &c * gv);
        gamma2 += &mass * (&b * hu);
        gamma3 += &mass * (&c * hv);
        mass *= matrix.entry(i, j);
    }
    debug_assert!(!gamma2.is_negative() && !gamma3.is_negative());
    debug_assert!(&gamma2 + &gamma3 <= crate::rational::rat_int(2));
    Ok(AffineCoefficients {
        gamma1,
        gamma2,
        gamma3,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub samples: u64,
    pub seed: u64,
    pub tolerance: f64,
    /// Worst deviation from the margin conditions on the boundary grid.
    pub boundary_worst: f64,
    /// Worst decrease along a coordinatewise-increasing sampled pair.
    pub monotonicity_worst: f64,
    /// Worst excess of |dQ| over |du| + |dv| on sampled pairs.
    pub lipschitz_worst: f64,
}

impl AxiomReport {
    pub fn passes(&self) -> bool {
        self.boundary_worst <= self.tolerance
            && self.monotonicity_worst <= self.tolerance
            && self.lipschitz_worst <= self.tolerance
    }

    pub fn worst(&self) -> f64 {
        self.boundary_worst
            .max(self.monotonicity_worst)
            .max(self.lipschitz_worst)
    }
}

/// Audits the quasi-copula axioms on a boundary grid plus seeded random
/// pairs.  Violations up to `tolerance` are accepted; worst deviations are
/// reported signed, so negative values mean margin.
pub fn axiom_report(q: &dyn Evaluable, samples: u64, seed: u64, tolerance: f64) -> Result<AxiomReport, EvalError> {
    assert!(samples > 0, "need at least one sample");
    let grid = samples.max(2).min(100_000);
    let mut boundary_worst = f64::NEG_INFINITY;
    for k in 0..grid {
        let t = k as f64 / (grid - 1) as f64;
        for d in [
            q.point(t, 0.0)?.abs(),
            q.point(0.0, t)?.abs(),
            (q.point(t, 1.0)? - t).abs(),
            (q.point(1.0, t)? - t).abs(),
        ] {
            boundary_worst = boundary_worst.max(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut monotonicity_worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        // Cycle pure-u, pure-v, and diagonal increases to exercise each
        // coordinate separately.
        let mut du = (1.0 - u) * rng.gen::<f64>();
        let mut dv = (1.0 - v) * rng.gen::<f64>();
        match k % 3 {
            0 => dv = 0.0,
            1 => du = 0.0,
            _ => {}
        }
        let lo = q.point(u, v)?;
        let hi = q.point(clamp01(u + du), clamp01(v + dv))?;
        monotonicity_worst = monotonicity_worst.max(lo - hi);
    }
    let mut lipschitz_worst = f64::NEG_INFINITY;
    for k in 0..samples {
        let u1: f64 = rng.gen();
        let v1: f64 = rng.gen();
        let (u2, v2) = if k % 2 == 0 {
            (rng.gen(), rng.gen())
        } else {
            (
                clamp01(u1 + 0.1 * (rng.gen::<f64>() - 0.5)),
                clamp01(v1 + 0.1 * (rng.gen::<f64>() - 0.5)),
            )
        };
        let d = (q.point(u2, v2)? - q.point(u1, v1)?).abs();
        lipschitz_worst = lipschitz_worst.max(d - ((u2 - u1).abs() + (v2 - v1).abs()));
    }
    Ok(AxiomReport {
        samples,
        seed,
        tolerance,
        boundary_worst,
        monotonicity_worst,
        lipschitz_worst,
    })
}

/// Writes `u,v,value,error_bound` rows over an `n x n` uniform grid,
/// row-major, 17 significant digits.
pub fn write_grid_csv<W: io::Write>(q: &dyn Evaluable, n: usize, out: &mut W) -> io::Result<()> {
    assert!(n >= 2, "grid needs at least two points per axis");
    writeln!(out, "u,v,value,error_bound")?;
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        for j in 0..n {
            let v = j as f64 / (n - 1) as f64;
            let (val, err) = q
                .point_with_bound(u, v)
                .expect("grid points lie in the unit square");
            writeln!(out, "{},{},{},{}", sig17(u), sig17(v), sig17(val), sig17(err))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};

    fn t0() -> QtMatrix2 {
        QtMatrix2::t0()
    }

    fn tr_half() -> QtMatrix2 {
        QtMatrix2::tr(&rat(1, 2)).unwrap()
    }

    #[test]
    fn locates_cells_half_open_with_closure_at_one() {
        let m = t0();
        let pp = m.partitions();
        assert_eq!(locate_cell(pp, 0.5, 0.5).unwrap(), (2, 2));
        assert_eq!(locate_cell(pp, 1.0 / 3.0, 0.0).unwrap(), (2, 1));
        assert_eq!(locate_cell(pp, 1.0, 1.0).unwrap(), (3, 3));
        assert_eq!(locate_cell_exact(pp, &rat(1, 3), &rat(0, 1)).unwrap(), (2, 1));
        assert_eq!(locate_cell_exact(pp, &rat_int(1), &rat(1, 3)).unwrap(), (3, 2));
        let t = tr_half();
        assert_eq!(locate_cell(t.partitions(), 1.0, 1.0).unwrap(), (4, 4));
        assert_eq!(
            locate_cell(pp, 1.5, 0.5),
            Err(EvalError::OutOfDomain { u: 1.5, v: 0.5 })
        );
        assert!(locate_cell(pp, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn one_step_transform_matches_hand_expansion() {
        // Center of T0: 1/6 + 1/6 - (1/3) * Pi(1/2, 1/2).
        let got = apply_transform(&t0(), &Pi, 0.5, 0.5).unwrap();
        assert!((got - 0.25).abs() < 1e-15);

        // Pi is the fixed point of the uniform matrix.
        let quarter = rat(1, 4);
        let uniform = QtMatrix2::from_display_rows(vec![
            vec![quarter.clone(), quarter.clone()],
            vec![quarter.clone(), quarter],
        ])
        .unwrap();
        for (u, v) in [(0.2, 0.9), (0.5, 0.5), (0.75, 0.1), (0.33, 0.66)] {
            let got = apply_transform(&uniform, &Pi, u, v).unwrap();
            assert!((got - u * v).abs() < 1e-15, "({u}, {v}): {got}");
        }

        // Margins survive one step bitwise for any base.
        for u in [0.0, 0.17, 0.5, 0.99, 1.0] {
            assert_eq!(apply_transform(&tr_half(), &WCopula, u, 1.0).unwrap(), u);
            assert_eq!(apply_transform(&tr_half(), &MinCopula, 1.0, u).unwrap(), u);
            assert_eq!(apply_transform(&t0(), &Pi, u, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn transform_agrees_across_shared_cell_edges() {
        // u = 1/3 is the right edge of column 1 and the left edge of column 2.
        let m = t0();
        let (u, v) = (rat(1, 3), rat(1, 2));
        let value = |i: usize, j: usize| {
            let (nx, ny, affine, t) = cell_step_exact(&m, i, j, &u, &v);
            affine + t * Pi.point_exact(&nx, &ny).unwrap()
        };
        assert_eq!(value(1, 2), value(2, 2));

        // Top row reproduces the margin from the raw cell formula.
        let (nx, ny, affine, t) = cell_step_exact(&m, 2, 3, &rat(1, 2), &rat_int(1));
        assert_eq!(affine + t * Pi.point_exact(&nx, &ny).unwrap(), rat(1, 2));
        assert_eq!(ny, rat_int(1));
    }

    #[test]
    fn fixed_point_center_value_and_boundaries() {
        let ev = FixedPointEvaluator::with_defaults(t0());
        let center = ev.eval(0.5, 0.5).unwrap();
        assert!((center.value - 0.25).abs() <= 1e-12);
        assert!(center.error_bound <= 1e-12);

        let edge = ev.eval(0.7, 0.0).unwrap();
        assert_eq!((edge.value, edge.error_bound), (0.0, 0.0));
        let edge = ev.eval(0.7, 1.0).unwrap();
        assert_eq!((edge.value, edge.error_bound), (0.7, 0.0));
        let edge = ev.eval(0.0, 0.3).unwrap();
        assert_eq!(edge.value, 0.0);

        assert!(ev.eval(-0.1, 0.5).is_err());
        assert!(FixedPointEvaluator::new(t0(), 0.0, 64).is_err());
        assert!(FixedPointEvaluator::new(t0(), f64::NAN, 64).is_err());
        assert!(FixedPointEvaluator::new(t0(), 1e-12, 0).is_err());
    }

    #[test]
    fn exact_evaluation_terminates_on_lattice_corners() {
        let ev = FixedPointEvaluator::with_defaults(t0());
        assert_eq!(ev.eval_exact(&rat(1, 3), &rat(2, 3)).unwrap(), Some(rat(1, 3)));

        // Depth-1 corners carry the matrix prefix sums.
        let m = ev.matrix().clone();
        let pp = m.partitions();
        for i in 0..=3 {
            for j in 0..=3 {
                let got = ev.eval_exact(&pp.p()[i], &pp.q()[j]).unwrap().unwrap();
                assert_eq!(got, *m.prefix_sum(i, j), "corner ({i}, {j})");
            }
        }

        // Depth-2 corners match a brute-force sum of depth-2 cell masses.
        let corner = (rat(4, 9), rat(5, 9));
        let mut expected = Rational::zero();
        for c1 in 1..=3 {
            for r1 in 1..=3 {
                for c2 in 1..=3 {
                    for r2 in 1..=3 {
                        let path = CellPath::new(vec![(c1, r1), (c2, r2)]).unwrap();
                        let rect = path_rect(&m, &path).unwrap();
                        if *rect.u2() <= corner.0 && *rect.v2() <= corner.1 {
                            expected += path_mass(&m, &path).unwrap();
                        }
                    }
                }
            }
        }
        assert_eq!(ev.eval_exact(&corner.0, &corner.1).unwrap(), Some(expected));

        // The center never hits an axis: its recursion is a true fixed point.
        assert_eq!(ev.eval_exact(&rat(1, 2), &rat(1, 2)).unwrap(), None);
    }

    #[test]
    fn fixed_point_is_self_consistent_under_one_more_step() {
        for m in [t0(), tr_half()] {
            let ev = FixedPointEvaluator::with_defaults(m.clone());
            for k in 0..=8 {
                for l in 0..=8 {
                    let (u, v) = (k as f64 / 8.0, l as f64 / 8.0);
                    let direct = ev.eval(u, v).unwrap().value;
                    let stepped = apply_transform(&m, &ev, u, v).unwrap();
                    assert!(
                        (direct - stepped).abs() <= 2.0 * ev.tolerance(),
                        "({u}, {v}): {direct} vs {stepped}"
                    );
                }
            }
        }
    }

    #[test]
    fn iterates_from_different_bases_converge_to_the_fixed_point() {
        let m = t0();
        let from_pi = IteratedTransform::new(m.clone(), Pi, 30);
        let from_min = IteratedTransform::new(m.clone(), MinCopula, 30);
        let ev = FixedPointEvaluator::with_defaults(m.clone());
        for k in 0..=8 {
            for l in 0..=8 {
                let (u, v) = (k as f64 / 8.0, l as f64 / 8.0);
                let a = from_pi.point(u, v).unwrap();
                let b = from_min.point(u, v).unwrap();
                // Bases differ by at most max|t|^30 = 3^-30 after 30 levels.
                assert!((a - b).abs() <= 1e-13, "({u}, {v}): {a} vs {b}");
                assert!((a - ev.eval(u, v).unwrap().value).abs() <= 2e-12);
            }
        }

        // One step of the iterator is exactly one transform application.
        let once = IteratedTransform::new(m.clone(), Pi, 1);
        for (u, v) in [(0.1, 0.85), (0.5, 0.5), (0.9, 0.2)] {
            assert_eq!(once.point(u, v).unwrap(), apply_transform(&m, &Pi, u, v).unwrap());
        }
    }

    #[test]
    fn volumes_reproduce_cell_masses() {
        let m = t0();
        let ev = FixedPointEvaluator::with_defaults(m.clone());

        let center = path_rect(&m, &CellPath::new(vec![(2, 2)]).unwrap()).unwrap();
        assert_eq!(
            (center.u1(), center.u2(), center.v1(), center.v2()),
            (&rat(1, 3), &rat(2, 3), &rat(1, 3), &rat(2, 3))
        );
        let vol = ev.volume(&center).unwrap();
        assert_eq!(vol.exact, Some(rat(-1, 3)));
        assert_eq!(vol.error_bound, 0.0);
        assert!((vol.value + 1.0 / 3.0).abs() < 1e-15);

        let nested = path_rect(&m, &CellPath::new(vec![(2, 2), (2, 2)]).unwrap()).unwrap();
        assert_eq!(ev.volume(&nested).unwrap().exact, Some(rat(1, 9)));

        assert_eq!(ev.volume(&Rect::unit()).unwrap().exact, Some(rat_int(1)));

        let flat = Rect::new(rat(1, 2), rat(1, 2), rat(0, 1), rat_int(1)).unwrap();
        assert!(flat.is_degenerate());
        assert_eq!(ev.volume(&flat).unwrap().exact, Some(rat_int(0)));

        assert!(Rect::new(rat(2, 3), rat(1, 3), rat(0, 1), rat_int(1)).is_err());
        assert!(Rect::new(rat(-1, 3), rat(1, 3), rat(0, 1), rat_int(1)).is_err());

        // One transform step spreads exactly t_ij on cell R_ij.
        let tr = QtMatrix2::tr(&rat(1, 3)).unwrap();
        let once = IteratedTransform::new(tr.clone(), Pi, 1);
        for ((i, j), t) in tr.cells() {
            let rect = path_rect(&tr, &CellPath::new(vec![(i, j)]).unwrap()).unwrap();
            let vol = volume(&once, &rect).unwrap();
            assert_eq!(vol.exact.as_ref(), Some(t), "cell ({i}, {j})");
        }
    }

    #[test]
    fn affine_restrictions_on_zero_mass_cells() {
        let m = t0();
        let origin = affine_coefficients(&m, &CellPath::new(vec![(1, 1)]).unwrap()).unwrap();
        assert_eq!(origin.gamma_f64(), (0.0, 0.0, 0.0));

        // Bottom cell (2,1) of T_{1/2}: only row mass below is 1 - r.
        let t = tr_half();
        let side = affine_coefficients(&t, &CellPath::new(vec![(2, 1)]).unwrap()).unwrap();
        assert_eq!(
            (side.gamma1(), side.gamma2(), side.gamma3()),
            (&rat_int(0), &rat_int(0), &rat_int(1))
        );

        let nested = affine_coefficients(&m, &CellPath::new(vec![(2, 2), (1, 1)]).unwrap()).unwrap();
        assert_eq!(
            (nested.gamma1(), nested.gamma2(), nested.gamma3()),
            (&rat(-2, 3), &rat_int(1), &rat_int(1))
        );

        // The evaluator agrees with the affine form inside the cell.
        let ev = FixedPointEvaluator::with_defaults(m.clone());
        let (u, v) = (rat(7, 18), rat(7, 18));
        let direct = ev.eval_exact(&u, &v).unwrap().unwrap();
        assert_eq!(direct, nested.eval_exact(&u, &v));
        assert_eq!(direct, rat(1, 9));

        // Affine restriction has zero mass on sub-rectangles.
        let sub = Rect::new(rat(13, 36), rat(5, 12), rat(25, 72), rat(31, 72)).unwrap();
        assert_eq!(ev.volume(&sub).unwrap().exact, Some(rat_int(0)));

        assert_eq!(
            affine_coefficients(&m, &CellPath::new(vec![(2, 2)]).unwrap()),
            Err(EvalError::PathMassNonzero)
        );
        assert_eq!(CellPath::new(vec![]).unwrap_err(), EvalError::EmptyPath);
        assert_eq!(
            affine_coefficients(&m, &CellPath::new(vec![(4, 1)]).unwrap()),
            Err(EvalError::CellOutOfRange { i: 4, j: 1, m: 3 })
        );
    }

    #[test]
    fn axiom_report_accepts_fixed_points_and_flags_violations() {
        let ev = FixedPointEvaluator::with_defaults(t0());
        let report = axiom_report(&ev, 2000, 7, 1e-9).unwrap();
        assert!(report.passes(), "{report:?}");

        let clean = axiom_report(&Pi, 2000, 7, 1e-12).unwrap();
        assert!(clean.passes(), "{clean:?}");

        // A rippled surface keeps the margins but breaks the Lipschitz bound.
        let rippled = FnEval::new(|u: f64, v: f64| {
            u * v + 0.2 * (10.0 * std::f64::consts::PI * u).sin() * (10.0 * std::f64::consts::PI * v).sin()
        });
        let bad = axiom_report(&rippled, 2000, 7, 1e-9).unwrap();
        assert!(!bad.passes());
        assert!(bad.lipschitz_worst > 0.05, "{bad:?}");
    }

    #[test]
    fn grid_csv_is_row_major_with_17_digit_values() {
        let mut buf = Vec::new();
        write_grid_csv(&Pi, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], "u,v,value,error_bound");
        assert_eq!(
            lines[5],
            "5.0000000000000000e-1,5.0000000000000000e-1,2.5000000000000000e-1,0.0000000000000000e0"
        );
        assert_eq!(
            lines[9],
            "1.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,0.0000000000000000e0"
        );
    }
}
