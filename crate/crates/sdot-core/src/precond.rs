//! Running preconditioners for the second-order solvers.
//!
//! Both Newton-type methods keep a matrix `S_n` that accumulates curvature
//! information from the sample stream and apply its inverse to each fresh
//! gradient. Forming and factoring `S_n` from scratch every step would cost
//! `O(J^3)` per sample; the structures here maintain the inverse itself.
//!
//! [`SgnInverseState`] handles the Gauss-Newton variant
//!
//! ```text
//! S_n = I + sum_{k=1..n} [ phi_k phi_k^T
//!                          + gamma (1 + floor(k/J))^(-beta) nu_{l_k} e_{l_k} e_{l_k}^T ]
//! ```
//!
//! where `phi_k` is the per-sample gradient and `l_k = 1 + (k-1 mod J)`
//! cycles through the atoms, so every step adds one gradient outer product
//! and one slowly decaying diagonal nudge that keeps the matrix uniformly
//! invertible. Each rank-one term is folded into `S_n^{-1}` with a
//! Sherman-Morrison step at `O(J^2)`; within update `k` the diagonal term is
//! applied first and the gradient term second, a fixed order that recorded
//! results depend on.
//!
//! [`SnPinvState`] handles the full Newton variant `S_n = I + sum_k hess_k`.
//! Restricted to the zero-mean subspace this equals `H_n = P (I + sum hess) P`
//! with `P` the centering projector, and the pseudoinverse obeys a clean
//! recursion: each step solves one `J x J` positive definite system built
//! from the previous pseudoinverse and `eps * diag(1/pi_k)`, at `O(J^3)` but
//! with a small constant. The full-space inverse is recovered as
//! `H_n^+ + (1/J) ones ones^T` whenever needed.
//!
//! [`dense_inverse_oracle`] rebuilds `S_n` from a recorded history and
//! inverts it by factorization. It shares no code path with the recursions,
//! which is the point: tests drive both and compare.

use libm::pow;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{centering_projector, symmetrize_in_place};
use crate::Error;

/// Rank-one update recursions are symmetric in exact arithmetic; roundoff
/// drift is averaged away every this many updates.
pub const SYMMETRIZE_PERIOD: usize = 1000;

/// Soft-assignment entries below this cannot be inverted in the Newton
/// recursion's diagonal and abort the update instead of poisoning it.
pub const PI_UNDERFLOW_GUARD: f64 = 1e-300;

/// Weight of the decaying diagonal regularizer folded in at update `k`
/// (1-based) for a target with `j` atoms: `gamma * (1 + floor(k/j))^(-beta)`
/// times the hit atom's mass. Exposed so tests and diagnostics can
/// reconstruct the deterministic part of `S_n` exactly.
pub fn regularizer_weight(k: usize, j: usize, gamma: f64, beta: f64) -> f64 {
    gamma * pow(1.0 + (k / j) as f64, -beta)
}

/// The atom index (0-based) whose diagonal entry is regularized at update
/// `k` (1-based): atoms are visited cyclically, `1, 2, .., J, 1, ..`.
pub fn regularizer_atom(k: usize, j: usize) -> usize {
    (k - 1) % j
}

/// Exact accumulated diagonal of the deterministic regularizer after `n`
/// updates: entry `l` is `nu_l * sum of regularizer_weight(k)` over the
/// updates `k <= n` that hit atom `l`.
pub fn regularizer_diagonal(n: usize, gamma: f64, beta: f64, nu: &DVector<f64>) -> DVector<f64> {
    let j = nu.len();
    let mut out = DVector::zeros(j);
    for k in 1..=n {
        let l = regularizer_atom(k, j);
        out[l] += regularizer_weight(k, j, gamma, beta) * nu[l];
    }
    out
}

/// Running inverse of the regularized Gauss-Newton matrix.
#[derive(Debug, Clone)]
pub struct SgnInverseState {
    s_inv: DMatrix<f64>,
    /// The forward matrix, maintained alongside the inverse: its scaled
    /// form `S_n / n` is a convergent curvature estimate worth reporting,
    /// and tests check the two representations against each other.
    s: DMatrix<f64>,
    n: usize,
    gamma: f64,
    beta: f64,
    u: DVector<f64>,
}

impl SgnInverseState {
    /// Starts from `S_0 = I`.
    pub fn new(j: usize, gamma: f64, beta: f64) -> Result<Self, Error> {
        if j == 0 {
            return Err(Error::EmptyInput("preconditioner dimension"));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParameter("gamma must be finite and nonnegative"));
        }
        if !beta.is_finite() || !(0.0..0.5).contains(&beta) {
            return Err(Error::InvalidParameter("beta must lie in [0, 1/2)"));
        }
        Ok(Self {
            s_inv: DMatrix::identity(j, j),
            s: DMatrix::identity(j, j),
            n: 0,
            gamma,
            beta,
            u: DVector::zeros(j),
        })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Number of updates folded in so far.
    pub fn updates(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The maintained inverse `S_n^{-1}`.
    pub fn s_inv(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// The forward matrix `S_n`.
    pub fn s_matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// The averaged matrix `S_n / n`; `None` before the first update.
    pub fn sbar(&self) -> Option<DMatrix<f64>> {
        if self.n == 0 {
            return None;
        }
        Some(&self.s / self.n as f64)
    }

    /// Folds update `n + 1` into the inverse: first the decaying diagonal
    /// term on the cyclically chosen atom, then the gradient outer product.
    /// `nu` is the target weight vector; `phi` the per-sample gradient.
    pub fn update(&mut self, phi: &DVector<f64>, nu: &DVector<f64>) -> Result<(), Error> {
        let j = self.dim();
        assert_eq!(phi.len(), j, "gradient length");
        assert_eq!(nu.len(), j, "weight length");
        for idx in 0..j {
            if !phi[idx].is_finite() {
                return Err(Error::NonFinite("gradient update"));
            }
        }
        let k = self.n + 1;

        // Diagonal piece: S <- S + w e_l e_l^T, inverse via Sherman-Morrison
        // with u = S^{-1} e_l, which is just a column read.
        let l = regularizer_atom(k, j);
        let w = regularizer_weight(k, j, self.gamma, self.beta) * nu[l];
        if w > 0.0 {
            for r in 0..j {
                self.u[r] = self.s_inv[(r, l)];
            }
            let denom = 1.0 + w * self.u[l];
            self.s_inv.ger(-w / denom, &self.u, &self.u, 1.0);
            self.s[(l, l)] += w;
        }

        // Gradient piece: S <- S + phi phi^T. The denominator
        // 1 + phi^T S^{-1} phi is at least 1 because S^{-1} is positive
        // definite, so the update cannot blow up.
        self.u.gemv(1.0, &self.s_inv, phi, 0.0);
        let denom = 1.0 + phi.dot(&self.u);
        self.s_inv.ger(-1.0 / denom, &self.u, &self.u, 1.0);
        self.s.ger(1.0, phi, phi, 1.0);

        self.n = k;
        if self.n % SYMMETRIZE_PERIOD == 0 {
            symmetrize_in_place(&mut self.s_inv);
        }
        Ok(())
    }

    /// `S_n^{-1} g` into a caller buffer.
    pub fn apply_inverse_into(&self, g: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.s_inv, g, 0.0);
    }

    /// `S_n^{-1} g` as an owned vector.
    pub fn apply_inverse(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_inverse_into(g, &mut out);
        out
    }
}

/// Running pseudoinverse of the Newton matrix restricted to the zero-mean
/// subspace.
///
/// The state carries both the restricted matrix `H_n` (projector plus the
/// accumulated sample Hessians) and its pseudoinverse. Each update pays one
/// dense factorization, which is the inherent cost of the Newton variant;
/// the Gauss-Newton recursion above exists precisely to avoid it.
#[derive(Debug, Clone)]
pub struct SnPinvState {
    h_pinv: DMatrix<f64>,
    h_fwd: DMatrix<f64>,
    n: usize,
    inner: DMatrix<f64>,
}

impl SnPinvState {
    /// Starts from the centering projector, which is its own pseudoinverse.
    pub fn new(j: usize) -> Result<Self, Error> {
        if j == 0 {
            return Err(Error::EmptyInput("preconditioner dimension"));
        }
        Ok(Self {
            h_pinv: centering_projector(j),
            h_fwd: centering_projector(j),
            n: 0,
            inner: DMatrix::zeros(j, j),
        })
    }

    pub fn dim(&self) -> usize {
        self.h_pinv.nrows()
    }

    pub fn updates(&self) -> usize {
        self.n
    }

    /// The maintained restricted pseudoinverse `H_n^+`.
    pub fn h_pinv(&self) -> &DMatrix<f64> {
        &self.h_pinv
    }

    /// The forward restricted matrix `H_n`.
    pub fn h_forward(&self) -> &DMatrix<f64> {
        &self.h_fwd
    }

    /// Folds in the Hessian of one sample, given its soft assignment `pi`.
    ///
    /// Because the per-sample Hessian `(diag(pi) - pi pi^T)/eps` has the
    /// same kernel (the constants) as `H_{n-1}`, the updated pseudoinverse
    /// has the closed form
    ///
    /// ```text
    /// H_n^+ = P (H_{n-1} + diag(pi)/eps)^{-1} P
    /// ```
    ///
    /// with `P` the centering projector: the rank-one `pi pi^T` part is
    /// absorbed exactly by the projections. The inner matrix is positive
    /// definite whenever every `pi_j` is positive; entries below
    /// [`PI_UNDERFLOW_GUARD`] abort with [`Error::AssignmentUnderflow`]. A
    /// seemingly equivalent update written against `H_{n-1}^+` alone
    /// (inner matrix `H_{n-1}^+ + eps * diag(1/pi)`) is *not* exact for
    /// non-uniform assignments; the oracle tests below distinguish the two.
    pub fn update(&mut self, pi: &DVector<f64>, eps: f64) -> Result<(), Error> {
        let j = self.dim();
        assert_eq!(pi.len(), j, "assignment length");
        assert!(eps > 0.0, "regularization strength must be positive");
        for (idx, &p) in pi.iter().enumerate() {
            if !(p >= PI_UNDERFLOW_GUARD) {
                return Err(Error::AssignmentUnderflow { index: idx });
            }
        }
        self.inner.copy_from(&self.h_fwd);
        for t in 0..j {
            self.inner[(t, t)] += pi[t] / eps;
        }
        let chol = Cholesky::new(self.inner.clone())
            .ok_or(Error::Singular("newton inner system"))?;
        let mut inv = chol.inverse();
        // Center the columns, then the rows: this is P * inv * P.
        for c in 0..j {
            let mut m = 0.0;
            for r in 0..j {
                m += inv[(r, c)];
            }
            m /= j as f64;
            for r in 0..j {
                inv[(r, c)] -= m;
            }
        }
        for r in 0..j {
            let mut m = 0.0;
            for c in 0..j {
                m += inv[(r, c)];
            }
            m /= j as f64;
            for c in 0..j {
                inv[(r, c)] -= m;
            }
        }
        symmetrize_in_place(&mut inv);
        self.h_pinv.copy_from(&inv);
        // Fold the sample Hessian into the forward matrix only now, so a
        // failed factorization leaves the state untouched.
        for t in 0..j {
            self.h_fwd[(t, t)] += pi[t] / eps;
        }
        self.h_fwd.ger(-1.0 / eps, pi, pi, 1.0);
        self.n += 1;
        Ok(())
    }

    /// Applies the full-space inverse `S_n^{-1} = H_n^+ + (1/J) ones ones^T`
    /// to `g`, into a caller buffer.
    pub fn apply_inverse_into(&self, g: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, &self.h_pinv, g, 0.0);
        let mean = g.sum() / self.dim() as f64;
        for i in 0..self.dim() {
            out[i] += mean;
        }
    }

    /// `S_n^{-1} g` as an owned vector.
    pub fn apply_inverse(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.apply_inverse_into(g, &mut out);
        out
    }

    /// The dense full-space inverse, materialized for tests and diagnostics.
    pub fn s_inv_dense(&self) -> DMatrix<f64> {
        let j = self.dim();
        let mut out = self.h_pinv.clone();
        let add = 1.0 / j as f64;
        for r in 0..j {
            for c in 0..j {
                out[(r, c)] += add;
            }
        }
        out
    }
}

/// One recorded rank-one term of a Gauss-Newton accumulation history.
#[derive(Debug, Clone)]
pub enum RankOneTerm {
    /// `weight * e_index e_index^T` on the diagonal.
    AtomWeight { index: usize, weight: f64 },
    /// `g g^T` for a recorded gradient `g`.
    Gradient(DVector<f64>),
}

/// Rebuilds `S = I + sum of terms` directly.
pub fn s_matrix_from_history(j: usize, history: &[RankOneTerm]) -> DMatrix<f64> {
    let mut s = DMatrix::identity(j, j);
    for term in history {
        match term {
            RankOneTerm::AtomWeight { index, weight } => {
                s[(*index, *index)] += weight;
            }
            RankOneTerm::Gradient(g) => {
                s.ger(1.0, g, g, 1.0);
            }
        }
    }
    s
}

/// Inverts the accumulated matrix by Cholesky factorization. Deliberately
/// independent of the Sherman-Morrison recursion so the two can be compared.
pub fn dense_inverse_oracle(j: usize, history: &[RankOneTerm]) -> Result<DMatrix<f64>, Error> {
    let s = s_matrix_from_history(j, history);
    let chol = Cholesky::new(s).ok_or(Error::Singular("accumulated curvature matrix"))?;
    Ok(chol.inverse())
}
