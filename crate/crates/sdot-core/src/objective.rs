//! The smoothed semi-dual objective and its per-sample derivatives.
//!
//! Fix a discrete target measure with atoms `y_1..y_J`, weights `nu`, a cost
//! `c`, and a regularization strength `eps > 0`. For a source point `x` and
//! a dual potential `v` in `R^J`, the per-sample score is
//!
//! ```text
//! h(x, v) = eps + eps * log( sum_j nu_j * exp((v_j - c(x, y_j)) / eps) )
//!           - sum_j v_j * nu_j
//! ```
//!
//! Averaging `h` over source samples gives the objective `H(v)` whose
//! minimizer `v*` (unique up to adding a constant, hence pinned to the
//! zero-mean subspace) satisfies `-H(v*) =` the regularized transport cost.
//!
//! Differentiating under the log-sum-exp produces, per sample,
//!
//! ```text
//! pi_j(x, v)  proportional to  nu_j * exp((v_j - c(x, y_j)) / eps)
//! grad h = pi - nu
//! hess h = (diag(pi) - pi pi^T) / eps
//! ```
//!
//! `pi` is the conditional (soft) assignment of `x` over target atoms: a
//! probability vector that concentrates on the nearest atom as `eps -> 0`.
//! The gradient therefore has zero sum and norm at most 2, and the Hessian
//! is positive semidefinite with zero row sums and spectral norm at most
//! `1/eps`. Every quantity here is evaluated through one max-shifted
//! log-sum-exp, so score ratios as extreme as `exp(1e6)` stay finite.

use alloc::vec::Vec;
use libm::{exp, log};
use nalgebra::{DMatrix, DVector};

use crate::numeric::{log_sum_exp, NeumaierSum};
use crate::Error;

/// Tolerance on `|sum of weights - 1|` accepted by measure constructors.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Ground cost between a source point and a target atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// Squared Euclidean distance, `|x - y|^2`.
    SqEuclidean,
    /// Squared Euclidean distance halved, `|x - y|^2 / 2`.
    HalfSqEuclidean,
}

/// A finitely supported probability measure: one point per row, one positive
/// weight per point, weights summing to one.
///
/// The constructor validates everything once so downstream code can assume a
/// well-formed measure; the cumulative weight table is precomputed for
/// inverse-CDF sampling and the log weights for assignment evaluation.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    points: DMatrix<f64>,
    weights: DVector<f64>,
    log_weights: DVector<f64>,
    cdf: Vec<f64>,
    min_weight: f64,
    max_weight: f64,
}

impl DiscreteMeasure {
    /// Builds a measure from support points (rows) and weights.
    pub fn new(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self, Error> {
        let count = points.nrows();
        if count == 0 {
            return Err(Error::EmptyInput("measure support"));
        }
        if points.ncols() == 0 {
            return Err(Error::EmptyInput("ambient dimension"));
        }
        if weights.len() != count {
            return Err(Error::DimensionMismatch { expected: count, found: weights.len() });
        }
        for i in 0..count {
            for d in 0..points.ncols() {
                if !points[(i, d)].is_finite() {
                    return Err(Error::InvalidMeasure("non-finite support point"));
                }
            }
        }
        let mut min_weight = f64::INFINITY;
        let mut max_weight = f64::NEG_INFINITY;
        let mut total = NeumaierSum::new();
        let mut cdf = Vec::with_capacity(count);
        for i in 0..count {
            let w = weights[i];
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidMeasure("weights must be finite and positive"));
            }
            min_weight = min_weight.min(w);
            max_weight = max_weight.max(w);
            total.add(w);
            cdf.push(total.value());
        }
        if libm::fabs(total.value() - 1.0) > SIMPLEX_TOL {
            return Err(Error::InvalidMeasure("weights must sum to one"));
        }
        let log_weights = weights.map(log);
        Ok(Self { points, weights, log_weights, cdf, min_weight, max_weight })
    }

    /// Builds a measure with equal weight on every row of `points`.
    pub fn uniform(points: DMatrix<f64>) -> Result<Self, Error> {
        let count = points.nrows();
        if count == 0 {
            return Err(Error::EmptyInput("measure support"));
        }
        let weights = DVector::from_element(count, 1.0 / count as f64);
        Self::new(points, weights)
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    /// True if the support is empty; constructors forbid this, so it only
    /// exists to satisfy the usual `len`/`is_empty` pairing.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ambient dimension of the support points.
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    /// Copies support point `i` into an owned vector.
    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    /// Index of the first support point whose cumulative weight exceeds `u`,
    /// clamped to the valid range; with `u` uniform on `[0, 1)` this samples
    /// from the measure.
    pub fn index_below(&self, u: f64) -> usize {
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.len() - 1)
    }
}

fn sq_dist_to_atoms(coord: impl Fn(usize) -> f64, target: &DiscreteMeasure, out: &mut DVector<f64>) {
    let pts = target.points();
    for j in 0..pts.nrows() {
        let mut acc = 0.0;
        for d in 0..pts.ncols() {
            let diff = coord(d) - pts[(j, d)];
            acc += diff * diff;
        }
        out[j] = acc;
    }
}

/// Fills `out[j] = c(x, y_j)` for every target atom.
pub fn cost_row_into(
    x: &DVector<f64>,
    target: &DiscreteMeasure,
    kind: CostKind,
    out: &mut DVector<f64>,
) -> Result<(), Error> {
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: x.len() });
    }
    if out.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: out.len() });
    }
    sq_dist_to_atoms(|d| x[d], target, out);
    if let CostKind::HalfSqEuclidean = kind {
        *out *= 0.5;
    }
    Ok(())
}

/// The vector of costs from `x` to every target atom.
pub fn cost_row(
    x: &DVector<f64>,
    target: &DiscreteMeasure,
    kind: CostKind,
) -> Result<DVector<f64>, Error> {
    let mut out = DVector::zeros(target.len());
    cost_row_into(x, target, kind, &mut out)?;
    Ok(out)
}

/// Evaluates the per-sample score and its soft assignment in one pass.
///
/// `c_x` is the precomputed cost row of the sample. On return `pi` holds the
/// assignment probabilities and the score `h(x, v)` is the return value.
/// This is the hot path of every solver step, so it takes caller-owned
/// buffers and panics (rather than returning errors) on length mismatches,
/// which are programmer errors.
pub fn eval_sample_into(
    c_x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
    target: &DiscreteMeasure,
    pi: &mut DVector<f64>,
) -> f64 {
    let j = target.len();
    assert!(eps > 0.0, "regularization strength must be positive");
    assert_eq!(c_x.len(), j, "cost row length");
    assert_eq!(v.len(), j, "potential length");
    assert_eq!(pi.len(), j, "assignment buffer length");
    let log_w = target.log_weights();

    // Scores z_j = log nu_j + (v_j - c_j)/eps, staged in the output buffer.
    let mut max = f64::NEG_INFINITY;
    for idx in 0..j {
        let z = log_w[idx] + (v[idx] - c_x[idx]) / eps;
        pi[idx] = z;
        if z > max {
            max = z;
        }
    }
    // Exponentiate against the max so the largest term is exactly 1.
    let mut sum = NeumaierSum::new();
    for idx in 0..j {
        let e = exp(pi[idx] - max);
        pi[idx] = e;
        sum.add(e);
    }
    let total = sum.value();
    let lse = max + log(total);
    for idx in 0..j {
        pi[idx] /= total;
    }
    // <v, nu> accumulated in index order for reproducibility.
    let mut dot = NeumaierSum::new();
    for idx in 0..j {
        dot.add(v[idx] * target.weights()[idx]);
    }
    eps + eps * lse - dot.value()
}

/// Soft assignment of a sample with cost row `c_x` under potential `v`.
pub fn soft_assignment(
    c_x: &DVector<f64>,
    v: &DVector<f64>,
    eps: f64,
    target: &DiscreteMeasure,
) -> DVector<f64> {
    let mut pi = DVector::zeros(target.len());
    eval_sample_into(c_x, v, eps, target, &mut pi);
    pi
}

/// Per-sample score `h(x, v)` for a sample with cost row `c_x`.
pub fn h_eps(c_x: &DVector<f64>, v: &DVector<f64>, eps: f64, target: &DiscreteMeasure) -> f64 {
    let mut pi = DVector::zeros(target.len());
    eval_sample_into(c_x, v, eps, target, &mut pi)
}

/// Per-sample gradient `pi - nu`. Zero-sum with norm at most 2.
pub fn grad_h(pi: &DVector<f64>, nu: &DVector<f64>) -> DVector<f64> {
    assert_eq!(pi.len(), nu.len(), "assignment and weight lengths");
    pi - nu
}

/// Per-sample Hessian `(diag(pi) - pi pi^T) / eps`: positive semidefinite,
/// zero row sums, spectral norm at most `1/eps`.
pub fn hess_h(pi: &DVector<f64>, eps: f64) -> DMatrix<f64> {
    assert!(eps > 0.0, "regularization strength must be positive");
    let j = pi.len();
    let mut h = DMatrix::zeros(j, j);
    for idx in 0..j {
        h[(idx, idx)] = pi[idx] / eps;
    }
    h.ger(-1.0 / eps, pi, pi, 1.0);
    h
}

/// Objective value together with its gradient and Hessian at `v`.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn exact_eval(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    v: &DVector<f64>,
    eps: f64,
    mut with_derivatives: Option<(&mut DVector<f64>, Option<&mut DMatrix<f64>>)>,
) -> Result<f64, Error> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: source.dim() });
    }
    if v.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), found: v.len() });
    }
    let j = target.len();
    let mut c_x = DVector::zeros(j);
    let mut pi = DVector::zeros(j);
    let mut value = NeumaierSum::new();
    let src_pts = source.points();
    for i in 0..source.len() {
        sq_dist_to_atoms(|d| src_pts[(i, d)], target, &mut c_x);
        if let CostKind::HalfSqEuclidean = kind {
            c_x *= 0.5;
        }
        let h = eval_sample_into(&c_x, v, eps, target, &mut pi);
        let w = source.weights()[i];
        value.add(w * h);
        if let Some((grad, hess)) = with_derivatives.as_mut() {
            for idx in 0..j {
                grad[idx] += w * (pi[idx] - target.weights()[idx]);
            }
            if let Some(hess) = hess.as_mut() {
                let s = w / eps;
                for idx in 0..j {
                    hess[(idx, idx)] += s * pi[idx];
                }
                hess.ger(-s, &pi, &pi, 1.0);
            }
        }
    }
    Ok(value.value())
}

/// Exact objective value for a discrete source: the weighted average of the
/// per-sample scores over the source support.
pub fn exact_value(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    v: &DVector<f64>,
    eps: f64,
) -> Result<f64, Error> {
    exact_eval(source, target, kind, v, eps, None)
}

/// Exact objective value and gradient for a discrete source.
pub fn exact_value_and_gradient(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    v: &DVector<f64>,
    eps: f64,
) -> Result<(f64, DVector<f64>), Error> {
    let mut grad = DVector::zeros(target.len());
    let value = exact_eval(source, target, kind, v, eps, Some((&mut grad, None)))?;
    Ok((value, grad))
}

/// Exact objective value, gradient, and Hessian for a discrete source.
pub fn exact_objective(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    v: &DVector<f64>,
    eps: f64,
) -> Result<ObjectiveEval, Error> {
    let j = target.len();
    let mut grad = DVector::zeros(j);
    let mut hess = DMatrix::zeros(j, j);
    let value = exact_eval(source, target, kind, v, eps, Some((&mut grad, Some(&mut hess))))?;
    Ok(ObjectiveEval { value, gradient: grad, hessian: hess })
}

/// Stable evaluation of `log sum_j nu_j exp((v_j - c_j)/eps)`, exposed for
/// callers that need the bare log-partition rather than the full score.
pub fn log_partition(c_x: &DVector<f64>, v: &DVector<f64>, eps: f64, target: &DiscreteMeasure) -> f64 {
    let j = target.len();
    assert_eq!(c_x.len(), j);
    assert_eq!(v.len(), j);
    let log_w = target.log_weights();
    let mut z = Vec::with_capacity(j);
    for idx in 0..j {
        z.push(log_w[idx] + (v[idx] - c_x[idx]) / eps);
    }
    log_sum_exp(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_atom_target() -> DiscreteMeasure {
        DiscreteMeasure::uniform(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap()
    }

    #[test]
    fn squared_euclidean_cost_of_a_three_four_five_triangle() {
        let target =
            DiscreteMeasure::uniform(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let full = cost_row(&x, &target, CostKind::SqEuclidean).unwrap();
        assert_abs_diff_eq!(full[0], 25.0, epsilon = 1e-15);
        let half = cost_row(&x, &target, CostKind::HalfSqEuclidean).unwrap();
        assert_abs_diff_eq!(half[0], 12.5, epsilon = 1e-15);
    }

    #[test]
    fn cost_row_rejects_dimension_mismatch() {
        let target = two_atom_target();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            cost_row(&x, &target, CostKind::SqEuclidean),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn measure_constructor_rejects_bad_weights() {
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let negative = DVector::from_vec(vec![1.5, -0.5]);
        assert!(DiscreteMeasure::new(pts.clone(), negative).is_err());
        let off_simplex = DVector::from_vec(vec![0.6, 0.6]);
        assert!(DiscreteMeasure::new(pts.clone(), off_simplex).is_err());
        let wrong_len = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            DiscreteMeasure::new(pts, wrong_len),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn measure_constructor_rejects_non_finite_support() {
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert!(DiscreteMeasure::uniform(pts).is_err());
    }

    #[test]
    fn inverse_cdf_lookup_respects_weight_proportions() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let w = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let m = DiscreteMeasure::new(pts, w).unwrap();
        assert_eq!(m.index_below(0.0), 0);
        assert_eq!(m.index_below(0.19), 0);
        assert_eq!(m.index_below(0.21), 1);
        assert_eq!(m.index_below(0.69), 1);
        assert_eq!(m.index_below(0.71), 2);
        assert_eq!(m.index_below(0.9999999), 2);
        // Values at or above 1 clamp to the last atom instead of panicking.
        assert_eq!(m.index_below(1.0), 2);
    }

    #[test]
    fn single_atom_score_is_eps_minus_cost() {
        // With one atom the assignment is forced, the log term vanishes, and
        // h = eps + v - v - c = eps - c.
        let target =
            DiscreteMeasure::uniform(DMatrix::from_row_slice(1, 1, &[2.0])).unwrap();
        let x = DVector::from_vec(vec![0.5]);
        let c = cost_row(&x, &target, CostKind::SqEuclidean).unwrap();
        let v = DVector::from_vec(vec![7.25]);
        let eps = 0.3;
        assert_abs_diff_eq!(h_eps(&c, &v, eps, &target), eps - c[0], epsilon = 1e-12);
        let pi = soft_assignment(&c, &v, eps, &target);
        assert_abs_diff_eq!(pi[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_two_atom_score_is_eps_plus_mean_cost_offset() {
        // Two equally weighted atoms, v = 0, equal costs c: the log term is
        // log(exp(-c/eps)) = -c/eps, so h = eps - ... collapses to eps - c.
        let target = two_atom_target();
        let c = DVector::from_vec(vec![0.0, 0.0]);
        let v = DVector::zeros(2);
        let eps = 0.7;
        assert_abs_diff_eq!(h_eps(&c, &v, eps, &target), eps, epsilon = 1e-14);
    }

    #[test]
    fn assignment_matches_hand_computed_odds() {
        // Potential tilted so the exponent ratio is exactly 3:1 toward the
        // second atom: v = (-t, t) with t = log(3)/2 gives pi = (1/4, 3/4).
        let target = two_atom_target();
        let c = DVector::zeros(2);
        let t = 0.549_306_144_334_054_9_f64; // log(3)/2
        let v = DVector::from_vec(vec![-t, t]);
        let pi = soft_assignment(&c, &v, 1.0, &target);
        assert_abs_diff_eq!(pi[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(pi[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn assignment_is_invariant_under_constant_potential_shifts() {
        let target = two_atom_target();
        let c = DVector::from_vec(vec![0.4, 1.3]);
        let v = DVector::from_vec(vec![0.2, -0.2]);
        let shifted = DVector::from_vec(vec![0.2 + 1e3, -0.2 + 1e3]);
        let eps = 0.05;
        let a = soft_assignment(&c, &v, eps, &target);
        let b = soft_assignment(&c, &shifted, eps, &target);
        for j in 0..2 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-12);
        }
        // The score shifts by exactly the constant times total mass... which
        // is zero net effect: eps*lse grows by the shift, <v, nu> as well.
        let ha = h_eps(&c, &v, eps, &target);
        let hb = h_eps(&c, &shifted, eps, &target);
        assert_abs_diff_eq!(ha, hb, epsilon = 1e-9);
    }

    #[test]
    fn assignment_survives_extreme_score_ratios() {
        // One atom is 2e6 * eps closer in potential: the other's probability
        // underflows to zero but nothing becomes NaN or infinite.
        let target = two_atom_target();
        let c = DVector::from_vec(vec![0.0, 2e6]);
        let v = DVector::zeros(2);
        let pi = soft_assignment(&c, &v, 1.0, &target);
        assert!(pi[0].is_finite() && pi[1].is_finite());
        assert_abs_diff_eq!(pi[0], 1.0, epsilon = 1e-15);
        assert_eq!(pi[1], 0.0);
        assert!(h_eps(&c, &v, 1.0, &target).is_finite());
    }

    #[test]
    fn gradient_is_zero_sum_and_bounded() {
        let target = two_atom_target();
        let c = DVector::from_vec(vec![0.9, 0.1]);
        let v = DVector::from_vec(vec![0.3, -0.3]);
        let pi = soft_assignment(&c, &v, 0.2, &target);
        let g = grad_h(&pi, target.weights());
        assert_abs_diff_eq!(g.sum(), 0.0, epsilon = 1e-14);
        assert!(g.norm() <= 2.0);
    }

    #[test]
    fn gradient_vanishes_when_assignment_equals_weights() {
        let target = two_atom_target();
        let pi = target.weights().clone();
        let g = grad_h(&pi, target.weights());
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn hessian_of_a_balanced_assignment() {
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        let h = hess_h(&pi, 1.0);
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((h - expected).norm() < 1e-15);
    }

    #[test]
    fn hessian_rows_sum_to_zero_and_scale_with_eps() {
        let pi = DVector::from_vec(vec![0.1, 0.6, 0.3]);
        let eps = 0.05;
        let h = hess_h(&pi, eps);
        for r in 0..3 {
            let row_sum: f64 = (0..3).map(|c| h[(r, c)]).sum();
            assert_abs_diff_eq!(row_sum, 0.0, epsilon = 1e-12);
        }
        let h1 = hess_h(&pi, 1.0);
        assert!((h * eps - h1).norm() < 1e-14);
    }

    #[test]
    fn exact_objective_reduces_to_per_sample_quantities_for_point_source() {
        let target = two_atom_target();
        let source =
            DiscreteMeasure::uniform(DMatrix::from_row_slice(1, 1, &[0.3])).unwrap();
        let v = DVector::from_vec(vec![0.1, -0.1]);
        let eps = 0.4;
        let eval = exact_objective(&source, &target, CostKind::SqEuclidean, &v, eps).unwrap();
        let c = cost_row(&source.point(0), &target, CostKind::SqEuclidean).unwrap();
        let pi = soft_assignment(&c, &v, eps, &target);
        assert_abs_diff_eq!(eval.value, h_eps(&c, &v, eps, &target), epsilon = 1e-15);
        assert!((eval.gradient - grad_h(&pi, target.weights())).norm() < 1e-15);
        assert!((eval.hessian - hess_h(&pi, eps)).norm() < 1e-15);
    }

    #[test]
    fn exact_objective_averages_with_source_weights() {
        let target = two_atom_target();
        let src_pts = DMatrix::from_row_slice(2, 1, &[0.25, 0.9]);
        let src_w = DVector::from_vec(vec![0.8, 0.2]);
        let source = DiscreteMeasure::new(src_pts, src_w).unwrap();
        let v = DVector::from_vec(vec![-0.05, 0.05]);
        let eps = 0.3;
        let value = exact_value(&source, &target, CostKind::SqEuclidean, &v, eps).unwrap();
        let mut expected = 0.0;
        for i in 0..2 {
            let c = cost_row(&source.point(i), &target, CostKind::SqEuclidean).unwrap();
            expected += source.weights()[i] * h_eps(&c, &v, eps, &target);
        }
        assert_abs_diff_eq!(value, expected, epsilon = 1e-14);
    }

    #[test]
    fn log_partition_agrees_with_score_identity() {
        // h = eps + eps*lse - <v, nu> must reassemble from the pieces.
        let target = two_atom_target();
        let c = DVector::from_vec(vec![0.7, 0.2]);
        let v = DVector::from_vec(vec![0.25, -0.25]);
        let eps = 0.15;
        let lse = log_partition(&c, &v, eps, &target);
        let h = h_eps(&c, &v, eps, &target);
        let dot = v.dot(target.weights());
        assert_abs_diff_eq!(h, eps + eps * lse - dot, epsilon = 1e-12);
    }
}
