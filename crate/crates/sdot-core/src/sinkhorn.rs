//! Dense log-domain scaling solver for discrete-discrete instances.
//!
//! When the source is finitely supported the regularized transport problem
//! can be solved to near machine precision by alternating dual updates,
//! which is what validates everything the stochastic solvers produce. All
//! updates run in the log domain: potentials `f` (source side) and `g`
//! (target side) are maintained directly and every marginal sum goes
//! through a max-shifted log-sum-exp, so small `eps` only costs iterations,
//! never overflow.
//!
//! One sweep updates `g` from `f`, then `f` from `g`:
//!
//! ```text
//! g_j = -eps * log sum_i mu_i exp((f_i - C_ij)/eps)
//! f_i = -eps * log sum_j nu_j exp((g_j - C_ij)/eps)
//! ```
//!
//! After the `f` update the coupling's row sums match `mu` by construction,
//! so convergence is measured by how far the column sums still are from
//! `nu`; the reported residual is the larger of the two l1 marginal errors.
//! It decreases monotonically over sweeps, which tests assert.
//!
//! The returned potential `v*` is `g` centered to zero mean (the natural
//! gauge for the semi-dual objective), `u*` is `f` shifted oppositely so
//! `u*_i + v*_j = f_i + g_j`, and the cost is evaluated as
//! `-exact_value(v*)` through the same code path the stochastic estimators
//! are judged against. An independent primal evaluation (cost plus entropy
//! of the coupling) is exposed separately for consistency checks.

use libm::exp;
use nalgebra::{DMatrix, DVector};

use crate::numeric::{log_sum_exp, NeumaierSum};
use crate::objective::{exact_value, CostKind, DiscreteMeasure};
use crate::Error;

/// Default tolerance on the l1 marginal residual.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Outcome of a scaling solve.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// The regularized transport cost, `-H(v*)`.
    pub w_eps: f64,
    /// Optimal target potential, zero-mean.
    pub v_star: DVector<f64>,
    /// Optimal source potential, shifted so `u*_i + v*_j` reproduces the
    /// coupling exponents.
    pub u_star: DVector<f64>,
    /// The primal coupling matrix (source rows, target columns).
    pub coupling: DMatrix<f64>,
    /// Sweeps actually performed.
    pub iterations: usize,
    /// Final l1 marginal residual (max over the two marginals).
    pub residual: f64,
    /// Whether the residual reached tolerance within the sweep budget. A
    /// stalled solve is returned with this flag false rather than as an
    /// error, so callers can inspect how far it got.
    pub converged: bool,
}

/// Pairwise cost matrix, source rows by target columns.
pub fn cost_matrix(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
) -> Result<DMatrix<f64>, Error> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: source.dim() });
    }
    let (rows, cols, d) = (source.len(), target.len(), source.dim());
    let sp = source.points();
    let tp = target.points();
    let mut c = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for k in 0..d {
                let diff = sp[(i, k)] - tp[(j, k)];
                acc += diff * diff;
            }
            c[(i, j)] = match kind {
                CostKind::SqEuclidean => acc,
                CostKind::HalfSqEuclidean => 0.5 * acc,
            };
        }
    }
    Ok(c)
}

/// Largest l1 deviation of the coupling's marginals from the prescribed
/// ones.
pub fn marginal_residual(
    coupling: &DMatrix<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
) -> f64 {
    let (rows, cols) = coupling.shape();
    assert_eq!(mu.len(), rows, "source marginal length");
    assert_eq!(nu.len(), cols, "target marginal length");
    let mut row_err = NeumaierSum::new();
    for i in 0..rows {
        let mut row = NeumaierSum::new();
        for j in 0..cols {
            row.add(coupling[(i, j)]);
        }
        row_err.add(libm::fabs(row.value() - mu[i]));
    }
    let mut col_err = NeumaierSum::new();
    for j in 0..cols {
        let mut col = NeumaierSum::new();
        for i in 0..rows {
            col.add(coupling[(i, j)]);
        }
        col_err.add(libm::fabs(col.value() - nu[j]));
    }
    row_err.value().max(col_err.value())
}

/// Primal objective of a coupling: transport cost plus `eps` times the
/// relative entropy against the product measure, with the integrand
/// convention `t (log t - 1)` (zero entries contribute zero). Shares no
/// code with the dual evaluation, so agreement between the two is a real
/// consistency check.
pub fn primal_value(
    coupling: &DMatrix<f64>,
    cost: &DMatrix<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
    eps: f64,
) -> f64 {
    let (rows, cols) = coupling.shape();
    assert_eq!(cost.shape(), (rows, cols), "cost matrix shape");
    let mut total = NeumaierSum::new();
    for i in 0..rows {
        for j in 0..cols {
            let p = coupling[(i, j)];
            if p <= 0.0 {
                continue;
            }
            let ratio = p / (mu[i] * nu[j]);
            total.add(p * cost[(i, j)] + eps * p * (libm::log(ratio) - 1.0));
        }
    }
    total.value()
}

/// Solves the discrete-discrete problem by alternating log-domain updates.
///
/// `tol` bounds the l1 marginal residual; `max_iter` caps the number of
/// sweeps. Non-convergence is reported in the result, not as an error.
pub fn sinkhorn_solve(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult, Error> {
    sinkhorn_solve_observed(source, target, kind, eps, tol, max_iter, &mut |_, _| {})
}

/// [`sinkhorn_solve`] with a per-sweep observer receiving `(sweep index,
/// residual after the sweep)`; used by convergence tests and progress
/// reporting.
#[allow(clippy::too_many_arguments)]
pub fn sinkhorn_solve_observed(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    eps: f64,
    tol: f64,
    max_iter: usize,
    on_sweep: &mut dyn FnMut(usize, f64),
) -> Result<SinkhornResult, Error> {
    assert!(eps > 0.0, "regularization strength must be positive");
    assert!(tol > 0.0, "tolerance must be positive");
    let c = cost_matrix(source, target, kind)?;
    let (rows, cols) = c.shape();
    let mu = source.weights();
    let nu = target.weights();
    let log_mu = source.log_weights();
    let log_nu = target.log_weights();

    let mut f = DVector::zeros(rows);
    let mut g = DVector::zeros(cols);
    let mut z = alloc::vec![0.0_f64; rows.max(cols)];
    let mut row_sums = DVector::zeros(rows);
    let mut col_sums = DVector::zeros(cols);

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for sweep in 1..=max_iter {
        // Target-side update from the current f.
        for j in 0..cols {
            for i in 0..rows {
                z[i] = log_mu[i] + (f[i] - c[(i, j)]) / eps;
            }
            g[j] = -eps * log_sum_exp(&z[..rows]);
        }
        // Source-side update from the fresh g; afterwards row sums are
        // exact by construction.
        for i in 0..rows {
            for j in 0..cols {
                z[j] = log_nu[j] + (g[j] - c[(i, j)]) / eps;
            }
            f[i] = -eps * log_sum_exp(&z[..cols]);
        }
        // Marginal residual of the current coupling, both sides in one
        // pass. Every exponent is <= 0 after the row normalization, so the
        // plain exponential cannot overflow.
        row_sums.fill(0.0);
        col_sums.fill(0.0);
        for i in 0..rows {
            for j in 0..cols {
                let p = exp(log_mu[i] + log_nu[j] + (f[i] + g[j] - c[(i, j)]) / eps);
                row_sums[i] += p;
                col_sums[j] += p;
            }
        }
        let mut row_err = NeumaierSum::new();
        for i in 0..rows {
            row_err.add(libm::fabs(row_sums[i] - mu[i]));
        }
        let mut col_err = NeumaierSum::new();
        for j in 0..cols {
            col_err.add(libm::fabs(col_sums[j] - nu[j]));
        }
        residual = row_err.value().max(col_err.value());
        iterations = sweep;
        on_sweep(sweep, residual);
        if residual <= tol {
            converged = true;
            break;
        }
    }

    // Gauge: v* zero-mean, with the constant moved into u* so that
    // u*_i + v*_j = f_i + g_j exactly.
    let mean_g = g.sum() / cols as f64;
    let v_star = g.map(|x| x - mean_g);
    let u_star = f.map(|x| x + mean_g);

    let mut coupling = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            coupling[(i, j)] = exp(log_mu[i] + log_nu[j] + (f[i] + g[j] - c[(i, j)]) / eps);
        }
    }

    let w_eps = -exact_value(source, target, kind, &v_star, eps)?;

    Ok(SinkhornResult { w_eps, v_star, u_star, coupling, iterations, residual, converged })
}
