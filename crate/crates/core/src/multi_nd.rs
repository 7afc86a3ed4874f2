//! n-dimensional quasi-transformation matrices.
//!
//! Entries live on a dense grid indexed one-based with axis 1 fastest; axis
//! partitions derive from slab sums exactly as the 2-D column and row sums
//! do.  Membership asks for (a) total mass 1, (b) strictly positive slab
//! sums, and (c) prefix-sum differences along each axis pinched between 0 and
//! the slab sum, all in exact arithmetic.
//!
//! The induced transform is non-local (every cell contributes through a
//! clamped rescaling), so instead of the 2-D single-branch descent the fixed
//! point is evaluated on exact depth-k lattices: masses of nonzero cell paths
//! accumulate at their upper corners and an n-dimensional prefix sum yields
//! Q_T exactly at every lattice point; off-lattice values are bracketed with
//! monotonicity plus the per-coordinate Lipschitz bound.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qt_matrix::QtMatrix2;
use crate::rational::{format_rational, parse_rational, rat, to_f64, Rational};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NdError {
    #[error("ambient dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("axis {axis} must have at least 2 slabs, got {size}")]
    AxisTooSmall { axis: usize, size: usize },
    #[error("entry list has {got} entries, shape wants {want}")]
    WrongEntryCount { got: usize, want: usize },
    #[error("entry grid of {0} cells exceeds the dense-storage budget of {1}")]
    TooManyEntries(usize, usize),
    #[error("entries sum to {0}, not 1")]
    SumNotOne(String),
    #[error("axis {axis} slab {index} has nonpositive sum {sum}")]
    NonpositiveSlab {
        axis: usize,
        index: usize,
        sum: Rational,
    },
    #[error("membership condition (c) fails at index {index:?} along axis {axis}")]
    ConditionCFailure { index: Vec<usize>, axis: usize },
    #[error("point {0:?} lies outside the unit cube")]
    OutOfDomain(Vec<f64>),
    #[error("point has {got} coordinates, matrix is {want}-dimensional")]
    WrongArity { got: usize, want: usize },
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("depth-{depth} lattice needs {amount} {what}, over the budget of {budget}")]
    BudgetExceeded {
        depth: u32,
        what: &'static str,
        amount: u128,
        budget: u64,
    },
    #[error("dimension equation has no root in range")]
    NoRootInRange,
}

pub const DEFAULT_ENTRY_BUDGET: usize = 1_000_000;
pub const DEFAULT_LATTICE_BUDGET: u64 = 1_000_000;

/// Runs the odometer over one-based index vectors of `shape`.
fn each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let n = shape.len();
    let mut idx = vec![1usize; n];
    loop {
        f(&idx);
        let mut axis = 0;
        loop {
            if axis == n {
                return;
            }
            idx[axis] += 1;
            if idx[axis] <= shape[axis] {
                break;
            }
            idx[axis] = 1;
            axis += 1;
        }
    }
}

/// A validated n-dimensional quasi-transformation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiMatrix {
    shape: Vec<usize>,
    /// One-based index 𝐢 lives at `sum (i_k - 1) * strides[k]`.
    entries: Vec<Rational>,
    strides: Vec<usize>,
    /// Prefix sums over zero-based corners, strides `pstrides`.
    prefix: Vec<Rational>,
    abs_prefix: Vec<Rational>,
    pstrides: Vec<usize>,
    axes: Vec<Vec<Rational>>,
    axes_f64: Vec<Vec<f64>>,
    nonzero: Vec<Vec<usize>>,
}

fn flat_offset(strides: &[usize], idx: &[usize], base: usize) -> usize {
    idx.iter()
        .zip(strides)
        .map(|(i, s)| (i - base) * s)
        .sum()
}

impl MultiMatrix {
    pub fn from_entries(shape: Vec<usize>, entries: Vec<Rational>) -> Result<Self, NdError> {
        let n = shape.len();
        if n < 2 {
            return Err(NdError::DimensionTooSmall(n));
        }
        for (k, &m) in shape.iter().enumerate() {
            if m < 2 {
                return Err(NdError::AxisTooSmall {
                    axis: k + 1,
                    size: m,
                });
            }
        }
        let want: usize = shape.iter().product();
        if want > DEFAULT_ENTRY_BUDGET {
            return Err(NdError::TooManyEntries(want, DEFAULT_ENTRY_BUDGET));
        }
        if entries.len() != want {
            return Err(NdError::WrongEntryCount {
                got: entries.len(),
                want,
            });
        }

        let mut strides = vec![1usize; n];
        for k in 1..n {
            strides[k] = strides[k - 1] * shape[k - 1];
        }
        let mut pstrides = vec![1usize; n];
        for k in 1..n {
            pstrides[k] = pstrides[k - 1] * (shape[k - 1] + 1);
        }
        let plen: usize = shape.iter().map(|m| m + 1).product();

        // (a) total mass.
        let total = entries.iter().fold(Rational::zero(), |a, t| a + t);
        if !total.is_one() {
            return Err(NdError::SumNotOne(format_rational(&total)));
        }

        // Prefix sums over [0..m_k] corners, one in-place pass per axis.
        let mut prefix = vec![Rational::zero(); plen];
        let mut abs_prefix = vec![Rational::zero(); plen];
        each_index(&shape, |idx| {
            let t = &entries[flat_offset(&strides, idx, 1)];
            let pos = flat_offset(&pstrides, idx, 0);
            prefix[pos] = t.clone();
            abs_prefix[pos] = t.abs();
        });
        for axis in 0..n {
            let stride = pstrides[axis];
            for pos in 0..plen {
                if (pos / stride) % (shape[axis] + 1) >= 1 {
                    let prev = prefix[pos - stride].clone();
                    prefix[pos] += prev;
                    let prev = abs_prefix[pos - stride].clone();
                    abs_prefix[pos] += prev;
                }
            }
        }

        let at = |table: &[Rational], idx: &[usize]| -> Rational {
            table[flat_offset(&pstrides, idx, 0)].clone()
        };

        // (b) slab sums, which also yield the axis partitions.
        let mut axes: Vec<Vec<Rational>> = Vec::with_capacity(n);
        for axis in 0..n {
            let mut cuts = Vec::with_capacity(shape[axis] + 1);
            cuts.push(Rational::zero());
            for k in 1..=shape[axis] {
                let mut hi = shape.to_vec();
                hi[axis] = k;
                cuts.push(at(&prefix, &hi));
            }
            for k in 1..=shape[axis] {
                let sum = &cuts[k] - &cuts[k - 1];
                if !sum.is_positive() {
                    return Err(NdError::NonpositiveSlab {
                        axis: axis + 1,
                        index: k,
                        sum,
                    });
                }
            }
            axes.push(cuts);
        }

        // (c) axis differences of prefix sums stay within [0, slab sum].
        let mut failure: Option<(Vec<usize>, usize)> = None;
        each_index(&shape, |idx| {
            if failure.is_some() {
                return;
            }
            for axis in 0..n {
                let mut lower = idx.to_vec();
                lower[axis] -= 1;
                let d = at(&prefix, idx) - at(&prefix, &lower);
                let slab = &axes[axis][idx[axis]] - &axes[axis][idx[axis] - 1];
                if d.is_negative() || d > slab {
                    failure = Some((idx.to_vec(), axis + 1));
                    return;
                }
            }
        });
        if let Some((index, axis)) = failure {
            return Err(NdError::ConditionCFailure { index, axis });
        }

        let axes_f64 = axes
            .iter()
            .map(|cuts| cuts.iter().map(to_f64).collect())
            .collect();
        let mut nonzero = Vec::new();
        each_index(&shape, |idx| {
            if !entries[flat_offset(&strides, idx, 1)].is_zero() {
                nonzero.push(idx.to_vec());
            }
        });
        Ok(MultiMatrix {
            shape,
            entries,
            strides,
            prefix,
            abs_prefix,
            pstrides,
            axes,
            axes_f64,
            nonzero,
        })
    }

    /// Embeds a validated 2-D matrix; the entry layouts coincide.
    pub fn from_2d(matrix: &QtMatrix2) -> Self {
        let m = matrix.order();
        let mut entries = Vec::with_capacity(m * m);
        for j in 1..=m {
            for i in 1..=m {
                entries.push(matrix.entry(i, j).clone());
            }
        }
        Self::from_entries(vec![m, m], entries).expect("valid 2-D matrices embed")
    }

    pub fn n(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn entries(&self) -> &[Rational] {
        &self.entries
    }

    pub fn entry(&self, idx: &[usize]) -> &Rational {
        assert_eq!(idx.len(), self.n(), "index arity mismatch");
        assert!(
            idx.iter().zip(&self.shape).all(|(i, m)| (1..=*m).contains(i)),
            "index {idx:?} outside shape {:?}",
            self.shape
        );
        &self.entries[flat_offset(&self.strides, idx, 1)]
    }

    /// Prefix sum over all cells with index ≤ `idx` componentwise;
    /// zero components are allowed.
    pub fn prefix_at(&self, idx: &[usize]) -> &Rational {
        &self.prefix[flat_offset(&self.pstrides, idx, 0)]
    }

    pub fn abs_prefix_at(&self, idx: &[usize]) -> &Rational {
        &self.abs_prefix[flat_offset(&self.pstrides, idx, 0)]
    }

    /// Partition 0 = a_0 < ... < a_m = 1 along `axis` (zero-based).
    pub fn axis_partition(&self, axis: usize) -> &[Rational] {
        &self.axes[axis]
    }

    pub fn axis_partition_f64(&self, axis: usize) -> &[f64] {
        &self.axes_f64[axis]
    }

    pub fn slab_sum(&self, axis: usize, k: usize) -> Rational {
        &self.axes[axis][k] - &self.axes[axis][k - 1]
    }

    pub fn nonzero_cells(&self) -> &[Vec<usize>] {
        &self.nonzero
    }

    pub fn is_proper(&self) -> bool {
        self.entries.iter().any(|t| t.is_negative())
    }

    /// Sup-metric Lipschitz constant of the transform: the largest jump of
    /// the absolute prefix sums across one diagonal step.
    pub fn contraction_alpha(&self) -> Rational {
        let mut alpha = Rational::zero();
        each_index(&self.shape, |idx| {
            let lower: Vec<usize> = idx.iter().map(|i| i - 1).collect();
            let jump = self.abs_prefix_at(idx) - self.abs_prefix_at(&lower);
            if jump > alpha {
                alpha = jump;
            }
        });
        alpha
    }

    pub fn to_json(&self) -> String {
        let raw = RawNdMatrix {
            n: self.n(),
            shape: self.shape.clone(),
            entries: self.entries.iter().map(format_rational).collect(),
        };
        serde_json::to_string(&raw).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NdJsonError> {
        let raw: RawNdMatrix =
            serde_json::from_str(text).map_err(|e| NdJsonError::Syntax(e.to_string()))?;
        if raw.n != raw.shape.len() {
            return Err(NdJsonError::DimensionMismatch {
                n: raw.n,
                len: raw.shape.len(),
            });
        }
        let product: usize = raw.shape.iter().product();
        if product != raw.entries.len() {
            return Err(NdJsonError::WrongLength {
                product,
                len: raw.entries.len(),
            });
        }
        let entries = raw
            .entries
            .iter()
            .map(|s| parse_rational(s).map_err(|_| NdJsonError::BadEntry(s.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_entries(raw.shape, entries)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RawNdMatrix {
    n: usize,
    shape: Vec<usize>,
    entries: Vec<String>,
}

#[derive(Debug, Error)]
pub enum NdJsonError {
    #[error("invalid JSON: {0}")]
    Syntax(String),
    #[error("field n = {n} disagrees with a shape of length {len}")]
    DimensionMismatch { n: usize, len: usize },
    #[error("shape product {product} does not match {len} entries")]
    WrongLength { product: usize, len: usize },
    #[error("unparsable rational entry '{0}'")]
    BadEntry(String),
    #[error(transparent)]
    Invalid(#[from] NdError),
}

/// Standalone membership check for a raw entry grid.
pub fn validate_nd(shape: &[usize], entries: &[Rational]) -> Result<(), NdError> {
    MultiMatrix::from_entries(shape.to_vec(), entries.to_vec()).map(|_| ())
}

/// A pointwise-evaluable function on the unit n-cube.  Implementations may
/// assume coordinates in [0,1]; `point_nd_exact` returns `Some` only for
/// certified exact values.
pub trait EvaluableNd {
    fn point_nd(&self, u: &[f64]) -> f64;

    fn point_nd_exact(&self, _u: &[Rational]) -> Option<Rational> {
        None
    }
}

/// Product n-copula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PiNd;

impl EvaluableNd for PiNd {
    fn point_nd(&self, u: &[f64]) -> f64 {
        u.iter().product()
    }

    fn point_nd_exact(&self, u: &[Rational]) -> Option<Rational> {
        Some(u.iter().fold(Rational::one(), |a, x| a * x))
    }
}

/// Upper Frechet n-bound, the minimum coordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MinNd;

impl EvaluableNd for MinNd {
    fn point_nd(&self, u: &[f64]) -> f64 {
        u.iter().copied().fold(1.0, f64::min)
    }

    fn point_nd_exact(&self, u: &[Rational]) -> Option<Rational> {
        u.iter().min().cloned()
    }
}

fn check_point_nd(matrix: &MultiMatrix, u: &[f64]) -> Result<(), NdError> {
    if u.len() != matrix.n() {
        return Err(NdError::WrongArity {
            got: u.len(),
            want: matrix.n(),
        });
    }
    if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(NdError::OutOfDomain(u.to_vec()));
    }
    Ok(())
}

/// One application of the n-dimensional transform: every nonzero cell
/// contributes its mass times the base at the clamped cell-local rescaling.
pub fn apply_transform_nd(
    matrix: &MultiMatrix,
    q: &dyn EvaluableNd,
    u: &[f64],
) -> Result<f64, NdError> {
    check_point_nd(matrix, u)?;
    let n = matrix.n();
    let mut local = vec![0.0; n];
    let mut acc = 0.0;
    'cells: for idx in matrix.nonzero_cells() {
        for k in 0..n {
            let a0 = matrix.axes_f64[k][idx[k] - 1];
            let a1 = matrix.axes_f64[k][idx[k]];
            let x = ((u[k] - a0) / (a1 - a0)).clamp(0.0, 1.0);
            if x == 0.0 {
                continue 'cells;
            }
            local[k] = x;
        }
        acc += to_f64(matrix.entry(idx)) * q.point_nd(&local);
    }
    Ok(acc)
}

/// Exact-rational variant; `None` when the base cannot certify some term.
pub fn apply_transform_nd_exact(
    matrix: &MultiMatrix,
    q: &dyn EvaluableNd,
    u: &[Rational],
) -> Result<Option<Rational>, NdError> {
    if u.len() != matrix.n() {
        return Err(NdError::WrongArity {
            got: u.len(),
            want: matrix.n(),
        });
    }
    if u.iter().any(|x| x.is_negative() || *x > Rational::one()) {
        return Err(NdError::OutOfDomain(u.iter().map(to_f64).collect()));
    }
    let n = matrix.n();
    let mut acc = Rational::zero();
    'cells: for idx in matrix.nonzero_cells() {
        let mut local = Vec::with_capacity(n);
        for k in 0..n {
            let a0 = &matrix.axes[k][idx[k] - 1];
            let a1 = &matrix.axes[k][idx[k]];
            let mut x = (&u[k] - a0) / (a1 - a0);
            if !x.is_positive() {
                continue 'cells;
            }
            if x > Rational::one() {
                x = Rational::one();
            }
            local.push(x);
        }
        match q.point_nd_exact(&local) {
            Some(qv) => acc += matrix.entry(idx) * qv,
            None => return Ok(None),
        }
    }
    Ok(Some(acc))
}

/// `T(base)` with per-cell float tables precomputed, for dense grid sweeps.
pub struct TransformedNd<B: EvaluableNd> {
    matrix: MultiMatrix,
    base: B,
    cells: Vec<CellCache>,
}

struct CellCache {
    t: f64,
    /// Per axis: lower cut and inverse width.
    axes: Vec<(f64, f64)>,
}

impl<B: EvaluableNd> TransformedNd<B> {
    pub fn new(matrix: MultiMatrix, base: B) -> Self {
        let cells = matrix
            .nonzero_cells()
            .iter()
            .map(|idx| CellCache {
                t: to_f64(matrix.entry(idx)),
                axes: (0..matrix.n())
                    .map(|k| {
                        let a0 = matrix.axes_f64[k][idx[k] - 1];
                        let a1 = matrix.axes_f64[k][idx[k]];
                        (a0, 1.0 / (a1 - a0))
                    })
                    .collect(),
            })
            .collect();
        TransformedNd {
            matrix,
            base,
            cells,
        }
    }

    pub fn matrix(&self) -> &MultiMatrix {
        &self.matrix
    }
}

impl<B: EvaluableNd> EvaluableNd for TransformedNd<B> {
    fn point_nd(&self, u: &[f64]) -> f64 {
        let n = u.len();
        let mut local = vec![0.0; n];
        let mut acc = 0.0;
        'cells: for cell in &self.cells {
            for k in 0..n {
                let (a0, winv) = cell.axes[k];
                let x = ((u[k] - a0) * winv).clamp(0.0, 1.0);
                if x == 0.0 {
                    continue 'cells;
                }
                local[k] = x;
            }
            acc += cell.t * self.base.point_nd(&local);
        }
        acc
    }

    fn point_nd_exact(&self, u: &[Rational]) -> Option<Rational> {
        apply_transform_nd_exact(&self.matrix, &self.base, u)
            .ok()
            .flatten()
    }
}

/// Inclusion–exclusion of `f` over the 2^n corners of the box `[lo, hi]`.
pub fn nd_box_volume<F: FnMut(&[Rational]) -> Rational>(
    lo: &[Rational],
    hi: &[Rational],
    mut f: F,
) -> Rational {
    let n = lo.len();
    assert_eq!(hi.len(), n);
    let mut total = Rational::zero();
    for mask in 0u32..(1 << n) {
        let corner: Vec<Rational> = (0..n)
            .map(|k| {
                if mask >> k & 1 == 1 {
                    hi[k].clone()
                } else {
                    lo[k].clone()
                }
            })
            .collect();
        let value = f(&corner);
        if (n as u32 - mask.count_ones()) % 2 == 0 {
            total += value;
        } else {
            total -= value;
        }
    }
    total
}

/// Exact fixed-point values on the depth-k refinement lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeValues {
    depth: u32,
    coords: Vec<Vec<Rational>>,
    coords_f64: Vec<Vec<f64>>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<Rational>,
}

impl LatticeValues {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Sorted per-axis lattice coordinates, always spanning 0 to 1.
    pub fn coords(&self) -> &[Vec<Rational>] {
        &self.coords
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    /// Value at zero-based lattice indices.
    pub fn value(&self, idx: &[usize]) -> &Rational {
        &self.values[flat_offset(&self.strides, idx, 0)]
    }

    /// Monotonicity plus Lipschitz bracket for an off-lattice point.
    pub fn bounds_at(&self, u: &[f64]) -> Result<(f64, f64), NdError> {
        let n = self.coords.len();
        if u.len() != n {
            return Err(NdError::WrongArity { got: u.len(), want: n });
        }
        if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(NdError::OutOfDomain(u.to_vec()));
        }
        let mut lo_idx = Vec::with_capacity(n);
        let mut hi_idx = Vec::with_capacity(n);
        let mut d_lo = 0.0;
        let mut d_hi = 0.0;
        for k in 0..n {
            let cs = &self.coords_f64[k];
            let floor = cs.partition_point(|c| *c <= u[k]) - 1;
            let ceil = if cs[floor] == u[k] {
                floor
            } else {
                floor + 1
            };
            d_lo += u[k] - cs[floor];
            d_hi += cs[ceil] - u[k];
            lo_idx.push(floor);
            hi_idx.push(ceil);
        }
        let q_lo = to_f64(self.value(&lo_idx));
        let q_hi = to_f64(self.value(&hi_idx));
        Ok(((q_hi - d_hi).max(q_lo), (q_lo + d_lo).min(q_hi)))
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Raw {
            depth: u32,
            coords: Vec<Vec<String>>,
            values: Vec<String>,
        }
        let raw = Raw {
            depth: self.depth,
            coords: self
                .coords
                .iter()
                .map(|cs| cs.iter().map(format_rational).collect())
                .collect(),
            values: self.values.iter().map(format_rational).collect(),
        };
        serde_json::to_string(&raw).expect("lattice serializes")
    }
}

pub fn lattice_eval(matrix: &MultiMatrix, depth: u32) -> Result<LatticeValues, NdError> {
    lattice_eval_with_budget(matrix, depth, DEFAULT_LATTICE_BUDGET)
}

pub fn lattice_eval_with_budget(
    matrix: &MultiMatrix,
    depth: u32,
    budget: u64,
) -> Result<LatticeValues, NdError> {
    let n = matrix.n();
    let nz = matrix.nonzero_cells();
    let paths = (nz.len() as u128).checked_pow(depth).unwrap_or(u128::MAX);
    if paths > budget as u128 {
        return Err(NdError::BudgetExceeded {
            depth,
            what: "cell paths",
            amount: paths,
            budget,
        });
    }

    // Depth-k boxes of all nonzero paths, iterative product over levels.
    struct NdBox {
        lo: Vec<Rational>,
        hi: Vec<Rational>,
        mass: Rational,
    }
    let mut boxes = vec![NdBox {
        lo: vec![Rational::zero(); n],
        hi: vec![Rational::one(); n],
        mass: Rational::one(),
    }];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(boxes.len() * nz.len());
        for b in &boxes {
            for idx in nz {
                let mut lo = Vec::with_capacity(n);
                let mut hi = Vec::with_capacity(n);
                for k in 0..n {
                    let width = &b.hi[k] - &b.lo[k];
                    let a0 = &matrix.axes[k][idx[k] - 1];
                    let a1 = &matrix.axes[k][idx[k]];
                    lo.push(&b.lo[k] + &width * a0);
                    hi.push(&b.lo[k] + &width * a1);
                }
                next.push(NdBox {
                    lo,
                    hi,
                    mass: &b.mass * matrix.entry(idx),
                });
            }
        }
        boxes = next;
    }

    let mut coord_sets: Vec<std::collections::BTreeSet<Rational>> =
        vec![std::collections::BTreeSet::new(); n];
    for b in &boxes {
        for k in 0..n {
            coord_sets[k].insert(b.lo[k].clone());
            coord_sets[k].insert(b.hi[k].clone());
        }
    }
    let coords: Vec<Vec<Rational>> = coord_sets
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    let shape: Vec<usize> = coords.iter().map(Vec::len).collect();
    let cells: u128 = shape.iter().map(|&m| m as u128).product();
    if cells > budget as u128 {
        return Err(NdError::BudgetExceeded {
            depth,
            what: "lattice points",
            amount: cells,
            budget,
        });
    }
    let mut strides = vec![1usize; n];
    for k in 1..n {
        strides[k] = strides[k - 1] * shape[k - 1];
    }

    // Masses land on upper corners, then prefix sums give Q_T exactly.
    let mut values = vec![Rational::zero(); cells as usize];
    for b in &boxes {
        let pos: usize = (0..n)
            .map(|k| {
                coords[k]
                    .binary_search(&b.hi[k])
                    .expect("upper corners are lattice coordinates")
                    * strides[k]
            })
            .sum();
        values[pos] += &b.mass;
    }
    for axis in 0..n {
        let stride = strides[axis];
        for pos in 0..values.len() {
            if (pos / stride) % shape[axis] >= 1 {
                let prev = values[pos - stride].clone();
                values[pos] += prev;
            }
        }
    }

    let coords_f64 = coords
        .iter()
        .map(|cs| cs.iter().map(to_f64).collect())
        .collect();
    Ok(LatticeValues {
        depth,
        coords,
        coords_f64,
        shape,
        strides,
        values,
    })
}

fn big3pow(exp: usize) -> Rational {
    Rational::from_integer((0..exp).fold(BigInt::one(), |a, _| a * 3))
}

fn check_family_input(n: usize, r: &Rational) -> Result<(), NdError> {
    if n < 2 {
        return Err(NdError::ParameterOutOfRange(format!(
            "ambient dimension must be at least 2, got {n}"
        )));
    }
    if 4usize.checked_pow(n as u32).map_or(true, |c| c > DEFAULT_ENTRY_BUDGET) {
        return Err(NdError::ParameterOutOfRange(format!(
            "4^{n} cells exceed the dense-storage budget"
        )));
    }
    if !r.is_positive() || *r >= Rational::one() {
        return Err(NdError::ParameterOutOfRange(format!(
            "r must lie in ]0, 1[, got {}",
            format_rational(r)
        )));
    }
    Ok(())
}

/// Shared normalizer of the step and cube families:
/// `K = 3^(n-1) - 1 + (2n-1)/(2n-3)`.
fn family_k(n: usize) -> Rational {
    big3pow(n - 1) - Rational::one() + rat(2 * n as i64 - 1, 2 * n as i64 - 3)
}

/// The 4^n step-family matrix: a corner hypercube of side `1-r` plus a
/// 3^n block of side-`r/3` hypercubes, the block's center negative.
pub fn make_step_matrix(n: usize, r: &Rational) -> Result<MultiMatrix, NdError> {
    check_family_input(n, r)?;
    let k_norm = family_k(n);
    let unit = r * rat(1, 3) / &k_norm;
    let boosted = rat(2 * n as i64 - 1, 2 * n as i64 - 3) * &unit;
    let shape = vec![4usize; n];
    let mut entries = Vec::with_capacity(shape.iter().product());
    each_index(&shape, |idx| {
        let value = if idx.iter().all(|&i| i == 1) {
            Rational::one() - r
        } else if idx.iter().any(|&i| i == 1) {
            Rational::zero()
        } else if idx.iter().all(|&i| i == 3) {
            -unit.clone()
        } else if idx.iter().filter(|&&i| i != 3).count() == 1 {
            boosted.clone()
        } else {
            unit.clone()
        };
        entries.push(value);
    });
    MultiMatrix::from_entries(shape, entries)
}

/// The 3^n family with dimension exactly `n`: all cells are side-1/3 cubes
/// and only the center carries negative mass.
pub fn make_cube_matrix(n: usize) -> Result<MultiMatrix, NdError> {
    if n < 2 {
        return Err(NdError::ParameterOutOfRange(format!(
            "ambient dimension must be at least 2, got {n}"
        )));
    }
    if 3usize.checked_pow(n as u32).map_or(true, |c| c > DEFAULT_ENTRY_BUDGET) {
        return Err(NdError::ParameterOutOfRange(format!(
            "3^{n} cells exceed the dense-storage budget"
        )));
    }
    let k_norm = family_k(n);
    let unit = rat(1, 3) / &k_norm;
    let boosted = rat(2 * n as i64 - 1, 2 * n as i64 - 3) * &unit;
    let shape = vec![3usize; n];
    let mut entries = Vec::with_capacity(shape.iter().product());
    each_index(&shape, |idx| {
        let off_center = idx.iter().filter(|&&i| i != 2).count();
        let value = match off_center {
            0 => -unit.clone(),
            1 => boosted.clone(),
            _ => unit.clone(),
        };
        entries.push(value);
    });
    MultiMatrix::from_entries(shape, entries)
}

/// Root in `s` of `(1-r)^s + 3^n (r/3)^s = 1`, the dimension of the step
/// family's support.  Bisection over `]1, n[` against the exp/log form;
/// written independently of the 2-D family solver so the two can be checked
/// against each other.
pub fn solve_dim_nd(n: usize, r: f64, tol: f64) -> Result<f64, NdError> {
    if n < 2 {
        return Err(NdError::ParameterOutOfRange(format!(
            "ambient dimension must be at least 2, got {n}"
        )));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(NdError::ParameterOutOfRange(format!(
            "r must lie in ]0, 1[, got {r}"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(NdError::ParameterOutOfRange(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    let log_a = (1.0 - r).ln();
    let log_b = (r / 3.0).ln();
    let scale = 3f64.powi(n as i32);
    let h = |s: f64| (s * log_a).exp() + scale * (s * log_b).exp() - 1.0;
    let (mut lo, mut hi) = (1.0, n as f64);
    if !(h(lo) > 0.0 && h(hi) < 0.0) {
        return Err(NdError::NoRootInRange);
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..500 {
        s = 0.5 * (lo + hi);
        let v = h(s);
        if v.abs() <= tol || hi - lo < 1e-15 {
            break;
        }
        if v > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
    }
    Ok(s)
}
