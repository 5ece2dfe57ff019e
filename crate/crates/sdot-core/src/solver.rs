//! Streaming solvers for the semi-dual objective.
//!
//! All four algorithms share one loop shape. At step `k` (1-based), with
//! iterate `v_{k-1}` in hand:
//!
//! 1. draw a source sample `X_k` and form its cost row;
//! 2. evaluate the score `h_k = h(X_k, v_{k-1})` and the soft assignment
//!    in one pass, and fold `h_k` into the running cost/variance
//!    estimators (the estimators always see the pre-move potential);
//! 3. form the gradient `phi_k = pi_k - nu` and a descent direction from
//!    the preconditioner state as it stands, before this step's
//!    information is folded in;
//! 4. move, `v_k = project(v_{k-1} - step_k * direction)`, onto the
//!    zero-mean subspace;
//! 5. only then fold the fresh sample into the preconditioner.
//!
//! The order matters: directions are measurable with respect to the past,
//! which the convergence theory assumes, and tests pin it by checking that
//! the first step of every preconditioned method is exactly a projected
//! gradient step. The ADAM variant is the standard exception, folding the
//! current gradient into its moment estimates before moving, which is how
//! that algorithm is defined.
//!
//! Step sizes: the plain stochastic gradient method uses
//! `scale * k^(alpha-1)`; the Newton-type methods use `k^alpha` ahead of an
//! inverse that already shrinks like `1/k`, with `alpha = 0` by default.

use alloc::vec::Vec;
use libm::pow;
use nalgebra::{DMatrix, DVector};

use crate::estimators::RunningEstimators;
use crate::linalg::project_zero_mean_in_place;
use crate::measures::{SeededStream, SourceMeasure};
use crate::objective::{cost_row_into, eval_sample_into, CostKind, DiscreteMeasure};
use crate::precond::{SgnInverseState, SnPinvState};
use crate::Error;

/// Plain projected stochastic gradient parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    /// Step-size decay exponent; the step at iteration `k` is
    /// `scale * k^(alpha - 1)`.
    pub alpha: f64,
    /// Step-size prefactor.
    pub scale: f64,
}

impl SgdParams {
    /// The tuning used throughout: `alpha = 1/2` and a prefactor matched to
    /// the instance's conditioning, `eps / (2 min(nu))`.
    pub fn for_instance(eps: f64, min_weight: f64) -> Self {
        Self { alpha: 0.5, scale: eps / (2.0 * min_weight) }
    }
}

/// ADAM parameters (the usual exponential moment estimates with bias
/// correction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub stepsize: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Denominator floor inside the coordinate-wise rescaling.
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { stepsize: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Regularized stochastic Gauss-Newton parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgnParams {
    /// Step-size growth exponent; the step at iteration `k` is `k^alpha`
    /// against a preconditioner whose inverse decays like `1/k`.
    pub alpha: f64,
    /// Strength of the decaying diagonal regularization.
    pub gamma: f64,
    /// Decay exponent of the diagonal regularization.
    pub beta: f64,
}

impl Default for SgnParams {
    fn default() -> Self {
        Self { alpha: 0.0, gamma: 1e-3, beta: 0.49 }
    }
}

/// Stochastic Newton parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnParams {
    /// Step-size growth exponent, as in [`SgnParams::alpha`].
    pub alpha: f64,
}

impl Default for SnParams {
    fn default() -> Self {
        Self { alpha: 0.0 }
    }
}

/// Which solver to run, with its tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmConfig {
    Sgd(SgdParams),
    Adam(AdamParams),
    Sgn(SgnParams),
    Sn(SnParams),
}

impl AlgorithmConfig {
    /// Stable lowercase identifier used in output tables.
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::Sgd(_) => "sgd",
            AlgorithmConfig::Adam(_) => "adam",
            AlgorithmConfig::Sgn(_) => "sgn",
            AlgorithmConfig::Sn(_) => "sn",
        }
    }

    /// Validates parameter ranges.
    pub fn validate(&self) -> Result<(), Error> {
        fn finite(x: f64) -> bool {
            x.is_finite()
        }
        match self {
            AlgorithmConfig::Sgd(p) => {
                // The plain-gradient decay exponent is alpha - 1; alpha = 1/2
                // (step ~ 1/sqrt(k)) is the standard tuning and is included,
                // unlike the growth exponent of the Newton-type methods.
                if !finite(p.alpha) || !(0.0..=0.5).contains(&p.alpha) {
                    return Err(Error::InvalidParameter("sgd alpha must lie in [0, 1/2]"));
                }
                if !finite(p.scale) || p.scale <= 0.0 {
                    return Err(Error::InvalidParameter("sgd scale must be positive"));
                }
            }
            AlgorithmConfig::Adam(p) => {
                if !finite(p.stepsize) || p.stepsize <= 0.0 {
                    return Err(Error::InvalidParameter("adam stepsize must be positive"));
                }
                if !finite(p.beta1) || !(0.0..1.0).contains(&p.beta1) {
                    return Err(Error::InvalidParameter("adam beta1 must lie in [0, 1)"));
                }
                if !finite(p.beta2) || !(0.0..1.0).contains(&p.beta2) {
                    return Err(Error::InvalidParameter("adam beta2 must lie in [0, 1)"));
                }
                if !finite(p.eps) || p.eps <= 0.0 {
                    return Err(Error::InvalidParameter("adam eps must be positive"));
                }
            }
            AlgorithmConfig::Sgn(p) => {
                if !finite(p.alpha) || !(0.0..0.5).contains(&p.alpha) {
                    return Err(Error::InvalidParameter("sgn alpha must lie in [0, 1/2)"));
                }
                if !finite(p.gamma) || p.gamma < 0.0 {
                    return Err(Error::InvalidParameter("sgn gamma must be nonnegative"));
                }
                if !finite(p.beta) || !(0.0..0.5).contains(&p.beta) {
                    return Err(Error::InvalidParameter("sgn beta must lie in [0, 1/2)"));
                }
                if p.alpha + p.beta >= 0.5 {
                    return Err(Error::InvalidParameter("sgn requires alpha + beta < 1/2"));
                }
            }
            AlgorithmConfig::Sn(p) => {
                if !finite(p.alpha) || !(0.0..0.5).contains(&p.alpha) {
                    return Err(Error::InvalidParameter("sn alpha must lie in [0, 1/2)"));
                }
            }
        }
        Ok(())
    }
}

enum PrecondState {
    None,
    Adam { m: DVector<f64>, v: DVector<f64> },
    Sgn(SgnInverseState),
    Sn(SnPinvState),
}

/// One solver's full mutable state over a run.
pub struct SolverState {
    config: AlgorithmConfig,
    eps: f64,
    v: DVector<f64>,
    n: u64,
    precond: PrecondState,
    est: RunningEstimators,
    // Reused per-step buffers.
    cost: DVector<f64>,
    pi: DVector<f64>,
    phi: DVector<f64>,
    dir: DVector<f64>,
}

impl SolverState {
    /// Fresh state at `v_0 = 0` for a target with `j` atoms.
    pub fn new(config: AlgorithmConfig, eps: f64, j: usize) -> Result<Self, Error> {
        config.validate()?;
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidParameter("eps must be positive and finite"));
        }
        if j == 0 {
            return Err(Error::EmptyInput("target support"));
        }
        let precond = match &config {
            AlgorithmConfig::Sgd(_) => PrecondState::None,
            AlgorithmConfig::Adam(_) => {
                PrecondState::Adam { m: DVector::zeros(j), v: DVector::zeros(j) }
            }
            AlgorithmConfig::Sgn(p) => PrecondState::Sgn(SgnInverseState::new(j, p.gamma, p.beta)?),
            AlgorithmConfig::Sn(_) => PrecondState::Sn(SnPinvState::new(j)?),
        };
        Ok(Self {
            config,
            eps,
            v: DVector::zeros(j),
            n: 0,
            precond,
            est: RunningEstimators::new(),
            cost: DVector::zeros(j),
            pi: DVector::zeros(j),
            phi: DVector::zeros(j),
            dir: DVector::zeros(j),
        })
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Current iterate.
    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.n
    }

    /// The running cost/variance estimators.
    pub fn estimators(&self) -> &RunningEstimators {
        &self.est
    }

    /// The averaged Gauss-Newton matrix `S_n / n`, when this solver
    /// maintains one.
    pub fn sbar(&self) -> Option<DMatrix<f64>> {
        match &self.precond {
            PrecondState::Sgn(state) => state.sbar(),
            _ => None,
        }
    }

    /// Advances the iterate by one sample.
    pub fn step(
        &mut self,
        x: &DVector<f64>,
        target: &DiscreteMeasure,
        kind: CostKind,
    ) -> Result<(), Error> {
        let j = target.len();
        let k = self.n + 1;
        cost_row_into(x, target, kind, &mut self.cost)?;
        let h = eval_sample_into(&self.cost, &self.v, self.eps, target, &mut self.pi);
        self.est.update(h);
        for idx in 0..j {
            self.phi[idx] = self.pi[idx] - target.weights()[idx];
        }

        match (&self.config, &mut self.precond) {
            (AlgorithmConfig::Sgd(p), PrecondState::None) => {
                let step = p.scale * pow(k as f64, p.alpha - 1.0);
                self.v.axpy(-step, &self.phi, 1.0);
            }
            (AlgorithmConfig::Adam(p), PrecondState::Adam { m, v }) => {
                for idx in 0..j {
                    let g = self.phi[idx];
                    m[idx] = p.beta1 * m[idx] + (1.0 - p.beta1) * g;
                    v[idx] = p.beta2 * v[idx] + (1.0 - p.beta2) * g * g;
                }
                let bias1 = 1.0 - pow(p.beta1, k as f64);
                let bias2 = 1.0 - pow(p.beta2, k as f64);
                for idx in 0..j {
                    let m_hat = m[idx] / bias1;
                    let v_hat = v[idx] / bias2;
                    self.v[idx] -= p.stepsize * m_hat / (libm::sqrt(v_hat) + p.eps);
                }
            }
            (AlgorithmConfig::Sgn(p), PrecondState::Sgn(state)) => {
                // Direction from the preconditioner as of step k-1.
                state.apply_inverse_into(&self.phi, &mut self.dir);
                let step = if p.alpha == 0.0 { 1.0 } else { pow(k as f64, p.alpha) };
                self.v.axpy(-step, &self.dir, 1.0);
                project_zero_mean_in_place(&mut self.v);
                state.update(&self.phi, target.weights())?;
                self.n = k;
                return Ok(());
            }
            (AlgorithmConfig::Sn(p), PrecondState::Sn(state)) => {
                state.apply_inverse_into(&self.phi, &mut self.dir);
                let step = if p.alpha == 0.0 { 1.0 } else { pow(k as f64, p.alpha) };
                self.v.axpy(-step, &self.dir, 1.0);
                project_zero_mean_in_place(&mut self.v);
                state.update(&self.pi, self.eps)?;
                self.n = k;
                return Ok(());
            }
            _ => unreachable!("preconditioner state always matches the config"),
        }
        project_zero_mean_in_place(&mut self.v);
        self.n = k;
        Ok(())
    }
}

/// A recorded point along a run.
#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Steps completed when the snapshot was taken (0 = initial state).
    pub n: u64,
    /// Reading of the caller's clock at the snapshot.
    pub wall_time_s: f64,
    /// The iterate.
    pub v: DVector<f64>,
    /// Running cost estimate; `None` at `n = 0`.
    pub w_hat: Option<f64>,
    /// Running score variance; `None` at `n = 0`.
    pub sigma2_hat: Option<f64>,
    /// Averaged Gauss-Newton matrix, when requested and available.
    pub sbar: Option<DMatrix<f64>>,
}

/// What to run and what to record.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub algorithm: AlgorithmConfig,
    pub eps: f64,
    /// Total steps; 0 records only the initial state.
    pub n_max: u64,
    /// Additional snapshot points, strictly increasing, each in
    /// `[1, n_max]`. The initial state is always recorded; the caller is
    /// expected to include `n_max` itself if wanted.
    pub snapshots: &'a [u64],
    /// Whether snapshots should carry the averaged Gauss-Newton matrix.
    pub record_sbar: bool,
}

/// Runs one solver over a fresh sample stream.
///
/// `clock` is sampled at every snapshot; callers pass a monotonic
/// elapsed-seconds closure, or a constant closure when timing is
/// irrelevant. Returns one snapshot for the initial state plus one per
/// requested point.
pub fn run(
    spec: &RunSpec<'_>,
    source: &SourceMeasure,
    target: &DiscreteMeasure,
    kind: CostKind,
    stream: SeededStream,
    clock: &mut dyn FnMut() -> f64,
) -> Result<Vec<Snapshot>, Error> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: source.dim() });
    }
    let mut last = 0u64;
    for &s in spec.snapshots {
        if s <= last || s > spec.n_max {
            return Err(Error::InvalidParameter(
                "snapshots must be strictly increasing within [1, n_max]",
            ));
        }
        last = s;
    }

    let mut state = SolverState::new(spec.algorithm, spec.eps, target.len())?;
    let mut rng = stream.rng();
    let mut x = DVector::zeros(source.dim());
    let mut out = Vec::with_capacity(spec.snapshots.len() + 1);
    out.push(snapshot_of(&state, spec.record_sbar, clock()));

    let mut next = spec.snapshots.iter().copied().peekable();
    for k in 1..=spec.n_max {
        source.sample_into(&mut rng, &mut x);
        state.step(&x, target, kind)?;
        if next.peek() == Some(&k) {
            next.next();
            out.push(snapshot_of(&state, spec.record_sbar, clock()));
        }
    }
    Ok(out)
}

fn snapshot_of(state: &SolverState, record_sbar: bool, wall_time_s: f64) -> Snapshot {
    Snapshot {
        n: state.steps(),
        wall_time_s,
        v: state.v().clone(),
        w_hat: state.estimators().w_hat(),
        sigma2_hat: state.estimators().sigma2_hat(),
        sbar: if record_sbar { state.sbar() } else { None },
    }
}
