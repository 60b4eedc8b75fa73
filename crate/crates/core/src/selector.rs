//! Per-bag reliable-shot selection.
//!
//! With the classifier fixed, each bag solves
//!
//! ```text
//! min_{q in {0,1}^m}  q . L - lambda |q|_1 - gamma |q|_2   s.t.  sum q >= min_count
//! ```
//!
//! For binary `q` the objective depends on the selected set only through its loss
//! sum and its size `k`, so the best set of each size is the `k` smallest losses.
//! The marginal cost of growing from `t - 1` to `t` shots is
//! `L'_t - lambda - gamma / (sqrt(t) + sqrt(t - 1))`, which is non-decreasing in `t`;
//! the optimum is therefore the sorted prefix on which that marginal is negative,
//! extended to at least `min_count` shots.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem<T> {
    pub losses: Vec<T>,
    pub lambda: T,
    pub gamma: T,
    pub min_count: usize,
}

impl<T: Scalar> SelectionProblem<T> {
    pub fn new(losses: Vec<T>, lambda: T, gamma: T, min_count: usize) -> Result<Self> {
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("selection losses".into()));
        }
        if min_count > losses.len() {
            return Err(Error::InvalidConfig(format!(
                "min_count {min_count} exceeds bag size {}",
                losses.len()
            )));
        }
        Ok(SelectionProblem {
            losses,
            lambda,
            gamma,
            min_count,
        })
    }
}

/// Selection threshold at sorted rank `t` (1-based): `lambda + gamma / (sqrt(t) + sqrt(t-1))`.
pub fn selection_threshold<T: Scalar>(lambda: T, gamma: T, t: usize) -> T {
    let t = T::of(t as f64);
    lambda + gamma / (t.sqrt() + (t - T::one()).sqrt())
}

/// Indices of `losses` in ascending order; equal losses keep ascending index.
pub(crate) fn ascending_order<T: Scalar>(losses: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap_or(Ordering::Equal));
    order
}

/// Global minimizer of the per-bag selection problem, in original index order.
pub fn select_reliable<T: Scalar>(problem: &SelectionProblem<T>) -> Vec<bool> {
    let order = ascending_order(&problem.losses);
    let mut q = vec![false; problem.losses.len()];
    for (pos, &idx) in order.iter().enumerate() {
        let t = pos + 1;
        if t <= problem.min_count
            || problem.losses[idx] < selection_threshold(problem.lambda, problem.gamma, t)
        {
            q[idx] = true;
        }
    }
    q
}

/// `q . L - lambda sum(q) - gamma sqrt(sum(q))` for binary `q`.
pub fn selection_objective<T: Scalar>(losses: &[T], q: &[bool], lambda: T, gamma: T) -> T {
    debug_assert_eq!(losses.len(), q.len());
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&l, &sel) in losses.iter().zip(q) {
        if sel {
            sum += l;
            count += 1;
        }
    }
    let k = T::of(count as f64);
    sum - lambda * k - gamma * k.sqrt()
}

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Exhaustive search over all feasible binary vectors.
///
/// Among vectors whose objective is within `1e-12` of the best, the one produced by
/// [`select_reliable`] is returned when it is among them; otherwise the first found
/// in enumeration order (mask as a little-endian bit pattern over indices).
pub fn brute_force_select<T: Scalar>(problem: &SelectionProblem<T>) -> Result<Vec<bool>> {
    let m = problem.losses.len();
    if m > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit {
            m,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let tie = T::of(1e-12);
    let mut best: Option<(T, u32)> = None;
    let mut q = vec![false; m];
    for mask in 0u32..(1u32 << m) {
        if (mask.count_ones() as usize) < problem.min_count {
            continue;
        }
        for (j, slot) in q.iter_mut().enumerate() {
            *slot = mask >> j & 1 == 1;
        }
        let obj = selection_objective(&problem.losses, &q, problem.lambda, problem.gamma);
        if best.is_none_or(|(b, _)| obj < b - tie) {
            best = Some((obj, mask));
        }
    }
    let (best_obj, best_mask) = best.expect("min_count <= m leaves the all-ones vector feasible");
    let greedy = select_reliable(problem);
    let greedy_obj = selection_objective(&problem.losses, &greedy, problem.lambda, problem.gamma);
    if (greedy_obj - best_obj).abs() <= tie {
        return Ok(greedy);
    }
    Ok((0..m).map(|j| best_mask >> j & 1 == 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(losses: &[f64], lambda: f64, gamma: f64, min_count: usize) -> SelectionProblem<f64> {
        SelectionProblem::new(losses.to_vec(), lambda, gamma, min_count).unwrap()
    }

    /// Independent oracle: minimum objective over every feasible subset.
    fn exhaustive_min(p: &SelectionProblem<f64>) -> f64 {
        let m = p.losses.len();
        (0u32..1 << m)
            .filter(|mask| mask.count_ones() as usize >= p.min_count)
            .map(|mask| {
                let k = mask.count_ones() as f64;
                let sum: f64 = (0..m)
                    .filter(|j| mask >> j & 1 == 1)
                    .map(|j| p.losses[j])
                    .sum();
                sum - p.lambda * k - p.gamma * k.sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn thresholds_of_first_example() {
        let th: Vec<f64> = (1..=3).map(|t| selection_threshold(0.5, 1.0, t)).collect();
        assert!((th[0] - 1.5).abs() < 1e-12);
        assert!((th[1] - (0.5 + 1.0 / (2f64.sqrt() + 1.0))).abs() < 1e-12);
        assert!((th[1] - 0.914).abs() < 1e-3);
        assert!((th[2] - 0.818).abs() < 1e-3);
    }

    #[test]
    fn select_examples() {
        let p1 = problem(&[0.1, 0.9, 1.3], 0.5, 1.0, 0);
        assert_eq!(select_reliable(&p1), vec![true, true, false]);
        // Every subset of the example: [1,1,0] attains the minimum.
        let obj = selection_objective(&p1.losses, &[true, true, false], 0.5, 1.0);
        assert!((obj - exhaustive_min(&p1)).abs() < 1e-12);

        let p2 = problem(&[0.1, 0.5, 2.0], 1.0, 0.0, 0);
        assert_eq!(select_reliable(&p2), vec![true, true, false]);

        let p3 = problem(&[5.0, 0.2, 9.0], 0.0, 0.0, 3);
        assert_eq!(select_reliable(&p3), vec![true, true, true]);

        let p4 = problem(&[0.3, 0.01, 2.0], 0.0, 0.0, 0);
        assert_eq!(select_reliable(&p4), vec![false, false, false]);
    }

    #[test]
    fn boundary_loss_is_excluded() {
        // Loss exactly at threshold lambda fails the strict test.
        let p = problem(&[1.0, 0.5], 1.0, 0.0, 0);
        assert_eq!(select_reliable(&p), vec![false, true]);
    }

    #[test]
    fn objective_examples() {
        let v: f64 = selection_objective(&[0.2, 1.0], &[true, false], 0.3, 0.4);
        assert!((v - (-0.5)).abs() < 1e-15);
        assert_eq!(
            selection_objective(&[0.2, 1.0], &[false, false], 0.3, 0.4),
            0.0
        );
        assert_eq!(selection_objective(&[0.75], &[true], 0.0, 0.0), 0.75);
    }

    #[test]
    fn brute_force_examples() {
        let p1 = problem(&[0.1, 0.9, 1.3], 0.5, 1.0, 0);
        let q = brute_force_select(&p1).unwrap();
        assert_eq!(q, vec![true, true, false]);
        let p = problem(&[0.4, 3.0, 1.0, 2.0], 5.0, 0.0, 4);
        assert_eq!(brute_force_select(&p).unwrap(), vec![true; 4]);
        let p = problem(&[0.5], 1.0, 0.0, 0);
        assert_eq!(brute_force_select(&p).unwrap(), vec![true]);
        let big = problem(&[0.0; 21], 0.0, 0.0, 0);
        assert!(matches!(
            brute_force_select(&big),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn invalid_problems_are_rejected() {
        assert!(SelectionProblem::new(vec![0.1, 0.2], 0.0, 0.0, 3).is_err());
        assert!(SelectionProblem::new(vec![f64::NAN], 0.0, 0.0, 0).is_err());
    }

    fn arb_problem() -> impl Strategy<Value = SelectionProblem<f64>> {
        (1usize..=10)
            .prop_flat_map(|m| {
                (
                    prop::collection::vec(0.0f64..3.0, m),
                    0.0f64..2.0,
                    0.0f64..2.0,
                    0..=m,
                )
            })
            .prop_map(|(losses, lambda, gamma, min_count)| SelectionProblem {
                losses,
                lambda,
                gamma,
                min_count,
            })
    }

    proptest! {
        #[test]
        fn greedy_matches_exhaustive(p in arb_problem()) {
            let q = select_reliable(&p);
            let obj = selection_objective(&p.losses, &q, p.lambda, p.gamma);
            prop_assert!((obj - exhaustive_min(&p)).abs() < 1e-9);
            let bf = brute_force_select(&p).unwrap();
            let bf_obj = selection_objective(&p.losses, &bf, p.lambda, p.gamma);
            prop_assert!((obj - bf_obj).abs() < 1e-9);
        }

        #[test]
        fn selection_is_sorted_prefix_and_feasible(p in arb_problem()) {
            let q = select_reliable(&p);
            let k = q.iter().filter(|&&v| v).count();
            prop_assert!(k >= p.min_count);
            let order = ascending_order(&p.losses);
            for (pos, &idx) in order.iter().enumerate() {
                prop_assert_eq!(q[idx], pos < k);
            }
        }

        #[test]
        fn larger_weights_never_shrink_selection(
            p in arb_problem(),
            dl in 0.0f64..1.0,
            dg in 0.0f64..1.0,
        ) {
            let base = select_reliable(&p).iter().filter(|&&v| v).count();
            let more_l = SelectionProblem { lambda: p.lambda + dl, ..p.clone() };
            let more_g = SelectionProblem { gamma: p.gamma + dg, ..p.clone() };
            prop_assert!(select_reliable(&more_l).iter().filter(|&&v| v).count() >= base);
            prop_assert!(select_reliable(&more_g).iter().filter(|&&v| v).count() >= base);
        }
    }
}
