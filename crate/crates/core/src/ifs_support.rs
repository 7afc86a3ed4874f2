//! Supports of matrix-generated quasi-copulas as invariant sets of an
//! iterated function system.
//!
//! Every nonzero cell of a matrix contributes one affine map squeezing the
//! unit square into that cell; the support of the fixed point is the
//! attractor of the family.  Depth-l compositions give an exact outer
//! approximation by `|Z|^l` rectangles with signed masses.  When all maps are
//! similarities the attractor dimension solves the Moran equation
//! `sum c_k^s = 1`, handled here by bisection, alongside the one-parameter
//! family `(1-r)^s + 3^n (r/3)^s = 1` and a box-counting estimator for
//! validating the closed forms against rasterized supports.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::qt_matrix::QtMatrix2;
use crate::rational::{format_rational, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SupportError {
    #[error("depth-{depth} enumeration needs {rects} rectangles, over the budget of {budget}")]
    BudgetExceeded { depth: u32, rects: u128, budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DimensionError {
    #[error("contraction ratio {0} is outside ]0, 1[")]
    RatioOutOfRange(f64),
    #[error("sum of ratio powers never crosses 1; no dimension in range")]
    NoRootInRange,
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("box counting needs at least three distinct usable scales")]
    DegenerateScales,
    #[error("mask has no occupied pixels")]
    EmptyMask,
}

/// One map of the support IFS: the affine contraction of the unit square
/// onto cell `(i, j)`, carrying mass `t_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    cell: (usize, usize),
    u_offset: Rational,
    u_width: Rational,
    v_offset: Rational,
    v_width: Rational,
    mass: Rational,
}

impl SimilarityMap {
    pub fn cell(&self) -> (usize, usize) {
        self.cell
    }

    pub fn mass(&self) -> &Rational {
        &self.mass
    }

    /// True when the image cell is square, making the map a genuine
    /// similarity with ratio equal to the side length.
    pub fn is_similarity(&self) -> bool {
        self.u_width == self.v_width
    }

    pub fn ratio(&self) -> Option<&Rational> {
        self.is_similarity().then_some(&self.u_width)
    }

    pub fn apply(&self, u: &Rational, v: &Rational) -> (Rational, Rational) {
        (
            &self.u_offset + &self.u_width * u,
            &self.v_offset + &self.v_width * v,
        )
    }

    /// Image of the unit square.
    pub fn image(&self) -> crate::eval2d::Rect {
        crate::eval2d::Rect::new(
            self.u_offset.clone(),
            &self.u_offset + &self.u_width,
            self.v_offset.clone(),
            &self.v_offset + &self.v_width,
        )
        .expect("cell images sit inside the unit square")
    }
}

/// One map per nonzero entry, in (column, row) order.
pub fn nonzero_maps(matrix: &QtMatrix2) -> Vec<SimilarityMap> {
    let pp = matrix.partitions();
    matrix
        .cells()
        .filter(|(_, t)| !t.is_zero())
        .map(|((i, j), t)| SimilarityMap {
            cell: (i, j),
            u_offset: pp.p()[i - 1].clone(),
            u_width: &pp.p()[i] - &pp.p()[i - 1],
            v_offset: pp.q()[j - 1].clone(),
            v_width: &pp.q()[j] - &pp.q()[j - 1],
            mass: t.clone(),
        })
        .collect()
}

pub fn all_similarities(maps: &[SimilarityMap]) -> bool {
    maps.iter().all(SimilarityMap::is_similarity)
}

/// Moran's open set condition witnessed by the open unit square: every image
/// must stay inside it and the open images must be pairwise disjoint.
pub fn moran_check(maps: &[SimilarityMap]) -> bool {
    let one = Rational::one();
    for m in maps {
        if m.u_offset.is_negative()
            || m.v_offset.is_negative()
            || &m.u_offset + &m.u_width > one
            || &m.v_offset + &m.v_width > one
        {
            return false;
        }
    }
    for (k, a) in maps.iter().enumerate() {
        for b in &maps[k + 1..] {
            let u_overlap = {
                let lo = (&a.u_offset).max(&b.u_offset);
                let hi = (&a.u_offset + &a.u_width).min(&b.u_offset + &b.u_width);
                *lo < hi
            };
            let v_overlap = {
                let lo = (&a.v_offset).max(&b.v_offset);
                let hi = (&a.v_offset + &a.v_width).min(&b.v_offset + &b.v_width);
                *lo < hi
            };
            if u_overlap && v_overlap {
                return false;
            }
        }
    }
    true
}

/// A depth-l composition rectangle with its exact corners and signed mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportRect {
    pub i_path: Vec<usize>,
    pub j_path: Vec<usize>,
    pub u1: Rational,
    pub u2: Rational,
    pub v1: Rational,
    pub v2: Rational,
    pub mass: Rational,
}

impl SupportRect {
    pub fn contains(&self, other: &SupportRect) -> bool {
        self.u1 <= other.u1 && other.u2 <= self.u2 && self.v1 <= other.v1 && other.v2 <= self.v2
    }
}

pub const DEFAULT_BUDGET: u64 = 10_000_000;

struct CellGeom {
    i: usize,
    j: usize,
    p0: Rational,
    wu: Rational,
    q0: Rational,
    wv: Rational,
    t: Rational,
}

struct WalkState {
    uoff: Rational,
    uscale: Rational,
    voff: Rational,
    vscale: Rational,
    mass: Rational,
}

fn walk<F: FnMut(&SupportRect)>(
    cells: &[CellGeom],
    left: u32,
    st: &WalkState,
    i_path: &mut Vec<usize>,
    j_path: &mut Vec<usize>,
    count: &mut u64,
    visit: &mut F,
) {
    if left == 0 {
        visit(&SupportRect {
            i_path: i_path.clone(),
            j_path: j_path.clone(),
            u1: st.uoff.clone(),
            u2: &st.uoff + &st.uscale,
            v1: st.voff.clone(),
            v2: &st.voff + &st.vscale,
            mass: st.mass.clone(),
        });
        *count += 1;
        return;
    }
    for cell in cells {
        let child = WalkState {
            uoff: &st.uoff + &st.uscale * &cell.p0,
            uscale: &st.uscale * &cell.wu,
            voff: &st.voff + &st.vscale * &cell.q0,
            vscale: &st.vscale * &cell.wv,
            mass: &st.mass * &cell.t,
        };
        i_path.push(cell.i);
        j_path.push(cell.j);
        walk(cells, left - 1, &child, i_path, j_path, count, visit);
        i_path.pop();
        j_path.pop();
    }
}

/// Streams every depth-l nonzero-path rectangle to `visit` without
/// materializing the whole list.  Returns the number visited.
pub fn visit_support_rects<F: FnMut(&SupportRect)>(
    matrix: &QtMatrix2,
    depth: u32,
    budget: u64,
    mut visit: F,
) -> Result<u64, SupportError> {
    let pp = matrix.partitions();
    let cells: Vec<CellGeom> = matrix
        .cells()
        .filter(|(_, t)| !t.is_zero())
        .map(|((i, j), t)| CellGeom {
            i,
            j,
            p0: pp.p()[i - 1].clone(),
            wu: &pp.p()[i] - &pp.p()[i - 1],
            q0: pp.q()[j - 1].clone(),
            wv: &pp.q()[j] - &pp.q()[j - 1],
            t: t.clone(),
        })
        .collect();
    let planned = (cells.len() as u128)
        .checked_pow(depth)
        .unwrap_or(u128::MAX);
    if planned > budget as u128 {
        return Err(SupportError::BudgetExceeded {
            depth,
            rects: planned,
            budget,
        });
    }
    let root = WalkState {
        uoff: Rational::zero(),
        uscale: Rational::one(),
        voff: Rational::zero(),
        vscale: Rational::one(),
        mass: Rational::one(),
    };
    let mut count = 0;
    walk(
        &cells,
        depth,
        &root,
        &mut Vec::with_capacity(depth as usize),
        &mut Vec::with_capacity(depth as usize),
        &mut count,
        &mut visit,
    );
    Ok(count)
}

/// Outer approximation of the support at a fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportApprox {
    matrix: QtMatrix2,
    depth: u32,
    rects: Vec<SupportRect>,
}

impl SupportApprox {
    pub fn matrix(&self) -> &QtMatrix2 {
        &self.matrix
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn rects(&self) -> &[SupportRect] {
        &self.rects
    }

    /// Signed masses always add back up to 1.
    pub fn total_mass(&self) -> Rational {
        self.rects
            .iter()
            .fold(Rational::zero(), |acc, r| acc + &r.mass)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            i_path: &'a [usize],
            j_path: &'a [usize],
            corners: [String; 4],
            mass: String,
        }
        let records: Vec<Record> = self
            .rects
            .iter()
            .map(|r| Record {
                i_path: &r.i_path,
                j_path: &r.j_path,
                corners: [
                    format_rational(&r.u1),
                    format_rational(&r.u2),
                    format_rational(&r.v1),
                    format_rational(&r.v2),
                ],
                mass: format_rational(&r.mass),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("support records serialize")
    }
}

pub fn enumerate_support(matrix: &QtMatrix2, depth: u32) -> Result<SupportApprox, SupportError> {
    enumerate_support_with_budget(matrix, depth, DEFAULT_BUDGET)
}

pub fn enumerate_support_with_budget(
    matrix: &QtMatrix2,
    depth: u32,
    budget: u64,
) -> Result<SupportApprox, SupportError> {
    let mut rects = Vec::new();
    visit_support_rects(matrix, depth, budget, |r| rects.push(r.clone()))?;
    Ok(SupportApprox {
        matrix: matrix.clone(),
        depth,
        rects,
    })
}

/// Pixels `k_min..=k_max` whose open interiors meet the open interval
/// `(lo, hi)` at resolution `res`; touching only at an edge does not count.
pub(crate) fn pixel_range(lo: &Rational, hi: &Rational, res: usize) -> (usize, usize) {
    let scale = Rational::from_integer(BigInt::from(res));
    let a = (lo * &scale).floor().to_integer();
    let b = (hi * &scale).ceil().to_integer() - BigInt::one();
    let clamp = |x: BigInt| -> usize {
        if x.is_negative() {
            0
        } else {
            x.to_usize().unwrap_or(res - 1).min(res - 1)
        }
    };
    (clamp(a), clamp(b))
}

/// Square bitmap of occupied pixels, x along the first axis, y upward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    res: usize,
    bits: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(res: usize) -> Self {
        assert!(res >= 1, "resolution must be positive");
        OccupancyGrid {
            res,
            bits: vec![false; res * res],
        }
    }

    pub fn full(res: usize) -> Self {
        let mut g = Self::new(res);
        g.bits.fill(true);
        g
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.res + x]
    }

    pub fn set(&mut self, x: usize, y: usize) {
        self.bits[y * self.res + x] = true;
    }

    pub fn occupied(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|b| !b)
    }

    /// Rasterizes the depth-l support: a pixel is occupied when its square
    /// overlaps some rectangle with positive area.
    pub fn from_support(
        matrix: &QtMatrix2,
        depth: u32,
        res: usize,
        budget: u64,
    ) -> Result<Self, SupportError> {
        let mut grid = Self::new(res);
        visit_support_rects(matrix, depth, budget, |r| {
            let (x1, x2) = pixel_range(&r.u1, &r.u2, res);
            let (y1, y2) = pixel_range(&r.v1, &r.v2, res);
            for y in y1..=y2 {
                for x in x1..=x2 {
                    grid.set(x, y);
                }
            }
        })?;
        Ok(grid)
    }
}

/// Solution of a Moran-type equation with its residual bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionReport {
    pub ratios: Vec<f64>,
    pub s: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: u32,
}

/// Solves `sum ratios^s = 1` by bisection; the left side is strictly
/// decreasing in `s`, so the root is unique when it exists.
pub fn solve_moran(ratios: &[f64], tol: f64) -> Result<DimensionReport, DimensionError> {
    for &c in ratios {
        if !(c > 0.0 && c < 1.0) {
            return Err(DimensionError::RatioOutOfRange(c));
        }
    }
    let f = |s: f64| ratios.iter().map(|c| c.powf(s)).sum::<f64>() - 1.0;
    let mut lo = 1e-9;
    if f(lo) <= 0.0 {
        return Err(DimensionError::NoRootInRange);
    }
    let mut hi = 2.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(DimensionError::NoRootInRange);
        }
    }
    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    while iterations < 200 {
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= tol || (hi - lo) < 1e-15 {
            break;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(DimensionReport {
        ratios: ratios.to_vec(),
        s: mid,
        residual: f(mid).abs(),
        bracket: (lo, hi),
        iterations,
    })
}

fn family_g(r: f64, s: f64, n: u32) -> f64 {
    (1.0 - r).powf(s) + 3f64.powi(n as i32) * (r / 3.0).powf(s)
}

/// Derivative of `g_s` in `r`; vanishes exactly at [`family_critical_r`].
pub fn family_g_prime(r: f64, s: f64, n: u32) -> f64 {
    s * (3f64.powi(n as i32 - 1) * (r / 3.0).powf(s - 1.0) - (1.0 - r).powf(s - 1.0))
}

/// The unique minimum of `r -> g_s(r)`; the dimension curve's inverse lives
/// on the increasing branch to its right.
pub fn family_critical_r(s: f64, n: u32) -> f64 {
    let c = 3f64.powf((1.0 - n as f64) / (s - 1.0));
    3.0 * c / (1.0 + 3.0 * c)
}

fn check_family_params(n: u32, tol: f64) -> Result<(), DimensionError> {
    if n < 2 {
        return Err(DimensionError::ParameterOutOfRange(format!(
            "ambient dimension must be at least 2, got {n}"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(DimensionError::ParameterOutOfRange(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    Ok(())
}

/// Dimension of the one-parameter family support: the root in `s` of
/// `(1-r)^s + 3^n (r/3)^s = 1`, strictly between 1 and `n`.
pub fn family_s_of_r(r: f64, n: u32, tol: f64) -> Result<f64, DimensionError> {
    check_family_params(n, tol)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(DimensionError::ParameterOutOfRange(format!(
            "r must lie in ]0, 1[, got {r}"
        )));
    }
    // g - 1 is strictly decreasing in s, positive at 1, negative at n.
    let f = |s: f64| family_g(r, s, n) - 1.0;
    let (mut lo, mut hi) = (1.0, n as f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inverts the family curve: the unique `r` with `g_s(r) = 1` on the
/// increasing branch `[r_critical, 1[`.
pub fn family_r_of_s(s: f64, n: u32, tol: f64) -> Result<f64, DimensionError> {
    check_family_params(n, tol)?;
    if !(s > 1.0 && s < n as f64) {
        return Err(DimensionError::ParameterOutOfRange(format!(
            "s must lie in ]1, {n}[, got {s}"
        )));
    }
    let g = |r: f64| family_g(r, s, n);
    let mut lo = family_critical_r(s, n).max(f64::MIN_POSITIVE);
    if g(lo) >= 1.0 {
        // The true r underflows binary64 when s sits this close to 1.
        return Err(DimensionError::ParameterOutOfRange(format!(
            "s = {s} is too close to 1 to invert in float range"
        )));
    }
    let mut hi = 1.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Least-squares fit of `ln N` against `ln 1/delta` over the usable scales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxCountFit {
    pub dim: f64,
    /// Root-mean-square deviation of `ln N` from the fitted line.
    pub fit_residual: f64,
    /// Effective scales actually measured: box side in pixels over `res`.
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Counts occupied `delta`-boxes per scale and fits the log-log slope.
/// Each scale is snapped to a whole box side of `round(delta * res)` pixels.
pub fn box_counting_estimate(
    mask: &OccupancyGrid,
    scales: &[f64],
) -> Result<BoxCountFit, DimensionError> {
    if mask.is_empty() {
        return Err(DimensionError::EmptyMask);
    }
    let res = mask.res();
    let mut sides: Vec<usize> = Vec::with_capacity(scales.len());
    for &delta in scales {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(DimensionError::DegenerateScales);
        }
        let side = (delta * res as f64).round() as usize;
        if side == 0 || side > res || sides.contains(&side) {
            return Err(DimensionError::DegenerateScales);
        }
        sides.push(side);
    }
    if sides.len() < 3 {
        return Err(DimensionError::DegenerateScales);
    }
    let mut counts = Vec::with_capacity(sides.len());
    for &side in &sides {
        let nb = res.div_ceil(side);
        let mut boxes = vec![false; nb * nb];
        for y in 0..res {
            for x in 0..res {
                if mask.get(x, y) {
                    boxes[(y / side) * nb + x / side] = true;
                }
            }
        }
        counts.push(boxes.iter().filter(|b| **b).count() as u64);
    }
    let xs: Vec<f64> = sides
        .iter()
        .map(|&side| -((side as f64 / res as f64).ln()))
        .collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).ln()).collect();
    let k = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let dim = sxy / sxx;
    let intercept = y_mean - dim * x_mean;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + dim * x)).powi(2))
        .sum();
    Ok(BoxCountFit {
        dim,
        fit_residual: (rss / k).sqrt(),
        scales: sides
            .iter()
            .map(|&side| side as f64 / res as f64)
            .collect(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{rat, rat_int};
    use std::collections::BTreeMap;

    const LOG5_OVER_LOG3: f64 = 1.4649735207179269;

    fn t0() -> QtMatrix2 {
        QtMatrix2::t0()
    }

    fn tr_half() -> QtMatrix2 {
        QtMatrix2::tr(&rat(1, 2)).unwrap()
    }

    #[test]
    fn maps_of_canonical_matrices() {
        let maps = nonzero_maps(&t0());
        assert_eq!(maps.len(), 5);
        assert!(all_similarities(&maps));
        assert!(maps.iter().all(|m| m.ratio() == Some(&rat(1, 3))));

        let maps = nonzero_maps(&tr_half());
        assert_eq!(maps.len(), 10);
        let mut ratios: Vec<Rational> = maps.iter().map(|m| m.ratio().unwrap().clone()).collect();
        ratios.sort();
        assert_eq!(ratios[..9], vec![rat(1, 6); 9][..]);
        assert_eq!(ratios[9], rat(1, 2));

        // Corner map of T_{1/2} sends the square onto [0,1/2]^2.
        let corner = maps.iter().find(|m| m.cell() == (1, 1)).unwrap();
        assert_eq!(corner.apply(&rat_int(1), &rat_int(1)), (rat(1, 2), rat(1, 2)));
        assert_eq!(corner.mass(), &rat(1, 2));
        assert_eq!(corner.image().u2(), &rat(1, 2));

        // Unequal line sums make rectangular, non-similar cells.
        let skew = QtMatrix2::from_display_rows(vec![
            vec![rat(1, 8), rat(3, 8)],
            vec![rat(1, 8), rat(3, 8)],
        ])
        .unwrap();
        let maps = nonzero_maps(&skew);
        assert!(!all_similarities(&maps));
        assert_eq!(maps[0].ratio(), None);
    }

    #[test]
    fn support_masses_count_and_nest() {
        let m = t0();
        let depth1 = enumerate_support(&m, 1).unwrap();
        assert_eq!(depth1.rects().len(), 5);
        let masses: Vec<Rational> = depth1.rects().iter().map(|r| r.mass.clone()).collect();
        assert_eq!(masses.iter().filter(|t| **t == rat(1, 3)).count(), 4);
        assert_eq!(masses.iter().filter(|t| **t == rat(-1, 3)).count(), 1);

        let depth2 = enumerate_support(&m, 2).unwrap();
        assert_eq!(depth2.rects().len(), 25);
        let mut histogram: BTreeMap<Rational, usize> = BTreeMap::new();
        for r in depth2.rects() {
            *histogram.entry(r.mass.clone()).or_default() += 1;
        }
        assert_eq!(histogram[&rat(1, 9)], 17);
        assert_eq!(histogram[&rat(-1, 9)], 8);
        // Sign tracks the parity of center-cell visits.
        for r in depth2.rects() {
            let visits = r
                .i_path
                .iter()
                .zip(&r.j_path)
                .filter(|(i, j)| (**i, **j) == (2, 2))
                .count();
            assert_eq!(r.mass.is_negative(), visits % 2 == 1);
        }

        for depth in 1..=3 {
            let approx = enumerate_support(&m, depth).unwrap();
            assert!(approx.total_mass().is_one(), "depth {depth}");
        }

        let depth3 = enumerate_support(&m, 3).unwrap();
        for small in depth3.rects() {
            assert!(
                depth2.rects().iter().any(|big| big.contains(small)),
                "depth-3 rect escaped depth-2 union"
            );
        }

        // A copula matrix keeps every path mass positive.
        let quarter = rat(1, 4);
        let uniform = QtMatrix2::from_display_rows(vec![
            vec![quarter.clone(), quarter.clone()],
            vec![quarter.clone(), quarter],
        ])
        .unwrap();
        let approx = enumerate_support(&uniform, 4).unwrap();
        assert!(approx.rects().iter().all(|r| r.mass.is_positive()));
        assert!(approx.total_mass().is_one());

        let json = depth1.to_json();
        assert!(json.contains("\"i_path\""));
        assert!(json.contains("\"corners\""));
        assert!(json.contains("\"-1/3\""));
    }

    #[test]
    fn enumeration_respects_the_budget() {
        let err = enumerate_support_with_budget(&t0(), 10, 100).unwrap_err();
        assert_eq!(
            err,
            SupportError::BudgetExceeded {
                depth: 10,
                rects: 9_765_625,
                budget: 100
            }
        );
    }

    #[test]
    fn moran_condition_on_cell_maps() {
        assert!(moran_check(&nonzero_maps(&t0())));
        assert!(moran_check(&nonzero_maps(&tr_half())));
        let maps = nonzero_maps(&t0());
        let doubled = vec![maps[0].clone(), maps[0].clone()];
        assert!(!moran_check(&doubled));
    }

    #[test]
    fn moran_equation_solver() {
        let report = solve_moran(&[0.5; 4], 1e-12).unwrap();
        assert!((report.s - 2.0).abs() <= 1e-9, "{}", report.s);
        assert!(report.residual <= 1e-12);

        let report = solve_moran(&[1.0 / 3.0; 5], 1e-12).unwrap();
        assert!((report.s - LOG5_OVER_LOG3).abs() <= 1e-9);

        // Final bracket still straddles the root.
        let f = |s: f64| 5.0 * (1.0f64 / 3.0).powf(s) - 1.0;
        assert!(f(report.bracket.0) > 0.0);
        assert!(f(report.bracket.1) < 0.0);

        let ratios: Vec<f64> = nonzero_maps(&tr_half())
            .iter()
            .map(|m| crate::rational::to_f64(m.ratio().unwrap()))
            .collect();
        let report = solve_moran(&ratios, 1e-12).unwrap();
        assert!((report.s - 1.47511460738194).abs() <= 1e-9, "{}", report.s);

        assert_eq!(solve_moran(&[0.5], 1e-12), Err(DimensionError::NoRootInRange));
        assert_eq!(solve_moran(&[], 1e-12), Err(DimensionError::NoRootInRange));
        assert_eq!(
            solve_moran(&[0.5, 1.5], 1e-12),
            Err(DimensionError::RatioOutOfRange(1.5))
        );
    }

    #[test]
    fn family_curve_and_its_inverse() {
        let s = family_s_of_r(0.5, 2, 1e-12).unwrap();
        assert!((s - 1.47511460738194).abs() <= 1e-9, "{s}");

        // Same equation as the Moran solve on the T_{1/2} ratios.
        let ratios: Vec<f64> = nonzero_maps(&tr_half())
            .iter()
            .map(|m| crate::rational::to_f64(m.ratio().unwrap()))
            .collect();
        let moran = solve_moran(&ratios, 1e-12).unwrap();
        assert!((s - moran.s).abs() <= 1e-9);

        // Critical point of g_{3/2} in the plane: r = 1/4, flat there.
        let rc = family_critical_r(1.5, 2);
        assert!((rc - 0.25).abs() <= 1e-12);
        assert!(family_g_prime(rc, 1.5, 2).abs() <= 1e-12);

        let mut last = 1.0;
        for k in 1..=19 {
            let r = k as f64 / 20.0;
            let s = family_s_of_r(r, 2, 1e-12).unwrap();
            assert!(s > last, "s(r) must increase, broke at r = {r}");
            last = s;
            let back = family_r_of_s(s, 2, 1e-12).unwrap();
            assert!((back - r).abs() <= 1e-9, "round trip at r = {r}: {back}");
        }

        assert!(family_s_of_r(0.0, 2, 1e-12).is_err());
        assert!(family_s_of_r(1.0, 2, 1e-12).is_err());
        assert!(family_s_of_r(0.5, 1, 1e-12).is_err());
        assert!(family_r_of_s(1.0, 2, 1e-12).is_err());
        assert!(family_r_of_s(2.0, 2, 1e-12).is_err());
    }

    #[test]
    fn box_counting_on_reference_masks() {
        let full = OccupancyGrid::full(81);
        let fit = box_counting_estimate(&full, &[1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0]).unwrap();
        assert_eq!(fit.counts, vec![9, 81, 729]);
        assert!((fit.dim - 2.0).abs() <= 1e-12);
        assert!(fit.fit_residual <= 1e-12);

        let mut diagonal = OccupancyGrid::new(243);
        for k in 0..243 {
            diagonal.set(k, k);
        }
        let fit = box_counting_estimate(
            &diagonal,
            &[1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0, 1.0 / 81.0, 1.0 / 243.0],
        )
        .unwrap();
        assert!((fit.dim - 1.0).abs() <= 0.05, "{}", fit.dim);

        assert_eq!(
            box_counting_estimate(&full, &[0.5, 0.25]),
            Err(DimensionError::DegenerateScales)
        );
        assert_eq!(
            box_counting_estimate(&full, &[0.5, 0.5, 0.25]),
            Err(DimensionError::DegenerateScales)
        );
        assert_eq!(
            box_counting_estimate(&full, &[0.5, 0.25, 2.0]),
            Err(DimensionError::DegenerateScales)
        );
        assert_eq!(
            box_counting_estimate(&OccupancyGrid::new(32), &[0.5, 0.25, 0.125]),
            Err(DimensionError::EmptyMask)
        );
    }

    #[test]
    fn triadic_support_counts_match_the_closed_form() {
        let grid = OccupancyGrid::from_support(&t0(), 6, 729, DEFAULT_BUDGET).unwrap();
        assert_eq!(grid.occupied(), 15_625);
        let scales: Vec<f64> = (1..=6).map(|k| 3f64.powi(-k)).collect();
        let fit = box_counting_estimate(&grid, &scales).unwrap();
        assert_eq!(fit.counts, vec![5, 25, 125, 625, 3125, 15625]);
        assert!((fit.dim - LOG5_OVER_LOG3).abs() <= 1e-12, "{}", fit.dim);
        assert!(fit.fit_residual <= 1e-12);
    }
}
