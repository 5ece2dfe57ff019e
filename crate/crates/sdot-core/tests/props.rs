//! Property tests for the algebraic invariants the rest of the crate
//! leans on: simplex geometry of assignments, gauge invariance of the
//! score, spectral bounds of per-sample Hessians, and the stability of the
//! log-sum-exp kernel.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sdot_core::linalg::{lambda_max, project_zero_mean, project_zero_mean_in_place};
use sdot_core::numeric::log_sum_exp;
use sdot_core::objective::{
    eval_sample_into, grad_h, hess_h, soft_assignment, DiscreteMeasure,
};

/// A target measure with `j` atoms on a line and strictly positive,
/// normalized weights built from raw positives.
fn measure_from(raws: &[f64]) -> DiscreteMeasure {
    let j = raws.len();
    let total: f64 = raws.iter().sum();
    let weights = DVector::from_iterator(j, raws.iter().map(|r| r / total));
    // Atom positions are irrelevant to these properties; spread them out.
    let points = DMatrix::from_fn(j, 1, |r, _| r as f64 * 0.7);
    DiscreteMeasure::new(points, weights).expect("valid measure")
}

fn instance_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..7).prop_flat_map(|j| {
        (
            proptest::collection::vec(0.05f64..10.0, j),
            proptest::collection::vec(-5.0f64..5.0, j),
            proptest::collection::vec(-3.0f64..3.0, j),
            0.05f64..5.0,
        )
    })
}

proptest! {
    #[test]
    fn assignments_live_on_the_simplex((raws, costs, v, eps) in instance_strategy()) {
        let target = measure_from(&raws);
        let c = DVector::from_vec(costs);
        let v = DVector::from_vec(v);
        let pi = soft_assignment(&c, &v, eps, &target);
        let mut total = 0.0;
        for &p in pi.iter() {
            prop_assert!(p >= 0.0);
            prop_assert!(p <= 1.0 + 1e-12);
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_and_assignment_ignore_constant_shifts(
        (raws, costs, v, eps) in instance_strategy(),
        t in -20.0f64..20.0,
    ) {
        let target = measure_from(&raws);
        let c = DVector::from_vec(costs);
        let v = DVector::from_vec(v);
        let shifted = v.add_scalar(t);
        let j = target.len();
        let mut pi_a = DVector::zeros(j);
        let mut pi_b = DVector::zeros(j);
        let h_a = eval_sample_into(&c, &v, eps, &target, &mut pi_a);
        let h_b = eval_sample_into(&c, &shifted, eps, &target, &mut pi_b);
        let scale = 1.0 + h_a.abs() + t.abs();
        prop_assert!((h_a - h_b).abs() < 1e-10 * scale, "h {h_a} vs shifted {h_b}");
        for idx in 0..j {
            prop_assert!((pi_a[idx] - pi_b[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn per_sample_gradient_is_zero_sum_and_bounded((raws, costs, v, eps) in instance_strategy()) {
        let target = measure_from(&raws);
        let c = DVector::from_vec(costs);
        let v = DVector::from_vec(v);
        let pi = soft_assignment(&c, &v, eps, &target);
        let g = grad_h(&pi, target.weights());
        prop_assert!(g.sum().abs() < 1e-12);
        let l1: f64 = g.iter().map(|x| x.abs()).sum();
        prop_assert!(l1 <= 2.0 + 1e-12, "gradient l1 norm {l1}");
    }

    #[test]
    fn per_sample_hessian_is_psd_with_vanishing_row_sums(
        (raws, costs, v, eps) in instance_strategy(),
    ) {
        let target = measure_from(&raws);
        let c = DVector::from_vec(costs);
        let v = DVector::from_vec(v);
        let pi = soft_assignment(&c, &v, eps, &target);
        let h = hess_h(&pi, eps);
        let j = target.len();
        for r in 0..j {
            let mut row = 0.0;
            for cidx in 0..j {
                row += h[(r, cidx)];
            }
            prop_assert!(row.abs() < 1e-12 / eps.min(1.0), "row sum {row}");
        }
        // Spectrum within [0, 1/eps], with round-off slack on both ends.
        let top = lambda_max(&h);
        prop_assert!(top <= 1.0 / eps + 1e-9 / eps);
        let quad_dirs = [DVector::from_fn(j, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 })];
        for d in quad_dirs {
            let q = (&h * &d).dot(&d);
            prop_assert!(q >= -1e-12 / eps, "negative curvature {q}");
        }
    }

    #[test]
    fn projection_centers_and_is_idempotent(vals in proptest::collection::vec(-100.0f64..100.0, 1..9)) {
        let v = DVector::from_vec(vals);
        let scale = 1.0 + v.amax();
        let once = project_zero_mean(&v);
        prop_assert!(once.sum().abs() < 1e-10 * scale);
        // Re-projecting only removes the round-off-sized residual mean.
        let mut twice = once.clone();
        project_zero_mean_in_place(&mut twice);
        for i in 0..once.len() {
            prop_assert!((once[i] - twice[i]).abs() < 1e-13 * scale);
        }
    }

    #[test]
    fn log_sum_exp_translates_additively(
        vals in proptest::collection::vec(-50.0f64..50.0, 1..9),
        c in -700.0f64..700.0,
    ) {
        let shifted: Vec<f64> = vals.iter().map(|x| x + c).collect();
        let base = log_sum_exp(&vals);
        let moved = log_sum_exp(&shifted);
        prop_assert!((moved - base - c).abs() < 1e-9 * (1.0 + base.abs() + c.abs()));
        // Sandwich bound against the max.
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = vals.len() as f64;
        prop_assert!(base >= max - 1e-12);
        prop_assert!(base <= max + n.ln() + 1e-12);
    }

    #[test]
    fn inverse_cdf_lookup_matches_a_linear_scan(
        raws in proptest::collection::vec(0.05f64..10.0, 1..9),
        u in 0.0f64..1.0,
    ) {
        let m = measure_from(&raws);
        let idx = m.index_below(u);
        // Reference: first index whose cumulative weight strictly exceeds u.
        let mut acc = 0.0;
        let mut expected = m.len() - 1;
        for i in 0..m.len() {
            acc += m.weights()[i];
            if u < acc {
                expected = i;
                break;
            }
        }
        // The binary search uses the precomputed (compensated) table, the
        // scan a plain sum; they may only disagree when u lands within
        // round-off of a boundary.
        if idx != expected {
            let boundary_gap = (acc - u).abs();
            prop_assert!(boundary_gap < 1e-12, "lookup {idx} vs scan {expected}");
        }
    }
}
