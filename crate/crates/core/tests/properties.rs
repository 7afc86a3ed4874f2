//! Randomized invariants: the fast validator against a naive re-summation
//! oracle, and the axioms of evaluated fixed points.

use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

use quasicopula::eval2d::{apply_transform, FixedPointEvaluator, Rect};
use quasicopula::multi_nd::{lattice_eval, validate_nd, MultiMatrix};
use quasicopula::qt_matrix::QtMatrix2;
use quasicopula::rational::{rat, Rational};

/// Membership re-stated entry by entry, no prefix tables: total mass 1,
/// strictly positive line sums, and no boundary-anchored block with
/// negative sum.
fn oracle_is_valid(grid: &[Vec<Rational>]) -> bool {
    let m = grid.len();
    if m < 2 || grid.iter().any(|col| col.len() != m) {
        return false;
    }
    let total: Rational = grid.iter().flatten().cloned().sum();
    if !total.is_one() {
        return false;
    }
    for k in 0..m {
        let column: Rational = grid[k].iter().cloned().sum();
        let row: Rational = grid.iter().map(|col| col[k].clone()).sum();
        if !column.is_positive() || !row.is_positive() {
            return false;
        }
    }
    for i1 in 0..m {
        for i2 in i1..m {
            for j1 in 0..m {
                for j2 in j1..m {
                    if i1 != 0 && j1 != 0 && i2 != m - 1 && j2 != m - 1 {
                        continue;
                    }
                    let mut sum = Rational::zero();
                    for col in &grid[i1..=i2] {
                        for t in &col[j1..=j2] {
                            sum += t;
                        }
                    }
                    if sum.is_negative() {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Column grids over denominator 24; most are balanced to total mass 1 so
/// the deeper conditions get exercised, the rest keep condition (a) honest.
fn grid_strategy() -> impl Strategy<Value = Vec<Vec<Rational>>> {
    (2usize..=4, proptest::bool::weighted(0.85)).prop_flat_map(|(m, balance)| {
        proptest::collection::vec(-4i64..=9, m * m).prop_map(move |nums| {
            let mut grid: Vec<Vec<Rational>> = (0..m)
                .map(|i| (0..m).map(|j| rat(nums[i * m + j], 24)).collect())
                .collect();
            if balance {
                let total: Rational = grid.iter().flatten().cloned().sum();
                let rest = total - &grid[m - 1][m - 1];
                grid[m - 1][m - 1] = Rational::one() - rest;
            }
            grid
        })
    })
}

fn uniform(m: usize) -> QtMatrix2 {
    QtMatrix2::new(vec![vec![rat(1, (m * m) as i64); m]; m]).unwrap()
}

fn valid_matrix() -> impl Strategy<Value = QtMatrix2> {
    prop_oneof![
        Just(QtMatrix2::t0()),
        (1i64..=9).prop_map(|k| QtMatrix2::tr(&rat(k, 10)).unwrap()),
        (2usize..=4).prop_map(uniform),
        grid_strategy().prop_filter_map("oracle-invalid", |g| QtMatrix2::new(g).ok()),
    ]
}

fn flat_axis1_fastest(grid: &[Vec<Rational>]) -> Vec<Rational> {
    let m = grid.len();
    (0..m)
        .flat_map(|j| (0..m).map(move |i| grid[i][j].clone()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn validators_match_the_naive_oracle(grid in grid_strategy()) {
        let want = oracle_is_valid(&grid);
        prop_assert_eq!(QtMatrix2::new(grid.clone()).is_ok(), want);
        let flat = flat_axis1_fastest(&grid);
        prop_assert_eq!(validate_nd(&[grid.len(), grid.len()], &flat).is_ok(), want);
    }

    #[test]
    fn fixed_points_are_monotone_and_lipschitz(
        matrix in valid_matrix(),
        a in 0f64..=1.0,
        b in 0f64..=1.0,
        c in 0f64..=1.0,
        d in 0f64..=1.0,
    ) {
        let q = FixedPointEvaluator::with_defaults(matrix);
        let (u1, u2) = if a <= b { (a, b) } else { (b, a) };
        let (v1, v2) = if c <= d { (c, d) } else { (d, c) };
        let lo = q.eval(u1, v1).unwrap();
        let hi = q.eval(u2, v2).unwrap();
        let slack = lo.error_bound + hi.error_bound + 1e-12;
        prop_assert!(lo.value <= hi.value + slack);
        prop_assert!(hi.value - lo.value <= (u2 - u1) + (v2 - v1) + slack);
    }

    #[test]
    fn fixed_points_meet_the_margins_exactly(matrix in valid_matrix(), t in 0f64..=1.0) {
        let q = FixedPointEvaluator::with_defaults(matrix);
        prop_assert_eq!(q.eval(t, 0.0).unwrap().value, 0.0);
        prop_assert_eq!(q.eval(0.0, t).unwrap().value, 0.0);
        prop_assert_eq!(q.eval(t, 1.0).unwrap().value, t);
        prop_assert_eq!(q.eval(1.0, t).unwrap().value, t);
    }

    #[test]
    fn fixed_points_are_fixed_under_one_more_transform(
        matrix in valid_matrix(),
        u in 0f64..=1.0,
        v in 0f64..=1.0,
    ) {
        let q = FixedPointEvaluator::with_defaults(matrix.clone());
        let direct = q.eval(u, v).unwrap();
        let once = apply_transform(&matrix, &q, u, v).unwrap();
        prop_assert!(
            (once - direct.value).abs() <= 2.0 * q.tolerance() + direct.error_bound + 1e-12,
            "direct {} vs transformed {}", direct.value, once
        );
    }

    #[test]
    fn exact_corner_values_are_the_prefix_sums(matrix in valid_matrix()) {
        let m = matrix.order();
        let p = matrix.partitions().p().to_vec();
        let qcuts = matrix.partitions().q().to_vec();
        let q = FixedPointEvaluator::with_defaults(matrix.clone());
        for i in 0..=m {
            for j in 0..=m {
                let got = q.eval_exact(&p[i], &qcuts[j]).unwrap()
                    .expect("partition corners evaluate exactly");
                prop_assert_eq!(&got, matrix.prefix_sum(i, j), "corner ({}, {})", i, j);
            }
        }

        // Depth-1 lattice of the embedded matrix carries the same table.
        let nd = MultiMatrix::from_2d(&matrix);
        let lattice = lattice_eval(&nd, 1).unwrap();
        for i in 0..=m {
            for j in 0..=m {
                let a = lattice.coords()[0].binary_search(&p[i]).unwrap();
                let b = lattice.coords()[1].binary_search(&qcuts[j]).unwrap();
                prop_assert_eq!(lattice.value(&[a, b]), matrix.prefix_sum(i, j));
            }
        }
    }

    #[test]
    fn volumes_add_over_abutting_rectangles(
        matrix in valid_matrix(),
        cuts in (0usize..=6, 1usize..=7, 1usize..=7, 0usize..=7, 1usize..=8),
    ) {
        let (a, db, dc, v1, dv) = cuts;
        let b = (a + db).min(8);
        let c = (b + dc).min(8);
        let v2 = (v1 + dv).min(8);
        let q = FixedPointEvaluator::with_defaults(matrix);
        let r = |x1: usize, x2: usize| {
            Rect::new(rat(x1 as i64, 8), rat(x2 as i64, 8), rat(v1 as i64, 8), rat(v2 as i64, 8))
                .unwrap()
        };
        let whole = q.volume(&r(a, c)).unwrap();
        let left = q.volume(&r(a, b)).unwrap();
        let right = q.volume(&r(b, c)).unwrap();
        let slack = whole.error_bound + left.error_bound + right.error_bound + 1e-12;
        prop_assert!(
            (whole.value - left.value - right.value).abs() <= slack,
            "{} vs {} + {}", whole.value, left.value, right.value
        );
        if let (Some(w), Some(l), Some(rr)) = (whole.exact, left.exact, right.exact) {
            prop_assert_eq!(w, l + rr);
        }
    }
}
