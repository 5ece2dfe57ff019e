#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

//! Stochastic semi-dual solvers for entropically regularized semi-discrete
//! optimal transport.
//!
//! The problem: move a source distribution (continuous or discrete) onto a
//! fixed discrete target with atoms `y_1..y_J` and weights `nu`, paying a
//! per-unit cost `c(x, y_j)`, with an entropy penalty of strength `eps` on
//! the transport plan. Dualizing the discrete side turns this into the
//! unconstrained minimization of `H(v) = E[h(X, v)]` over potentials
//! `v` in the zero-mean subspace of `R^J`, where `h` is a smooth per-sample
//! score built from a log-sum-exp (see [`objective`]). The negated minimum is
//! the regularized transport cost.
//!
//! Because `H` is an expectation, it can be minimized from a stream of source
//! samples. This crate implements four such streaming solvers behind a common
//! driver ([`solver`]): plain projected SGD, ADAM, a stochastic Newton method
//! that accumulates per-sample Hessians, and a regularized stochastic
//! Gauss-Newton method whose preconditioner is maintained as a running
//! inverse through rank-one Sherman-Morrison-Woodbury updates ([`precond`]).
//! Running cost/variance estimators ride along with the iterates
//! ([`estimators`]).
//!
//! For discrete-discrete instances a dense log-domain scaling solver
//! ([`sinkhorn`]) provides ground truth: the optimal potential, the exact
//! transport cost, and through [`diagnostics`] the limit matrices and every
//! inequality the stochastic theory rests on, so that solver output can be
//! cross-validated rather than eyeballed.
//!
//! The crate is `no_std` (with `alloc`); anything that needs a filesystem,
//! clocks, or threads lives in the companion CLI crate. All transcendental
//! math goes through `libm` and all randomness through seeded ChaCha8
//! streams, so results are reproducible bit for bit across platforms.

extern crate alloc;

pub mod diagnostics;
pub mod estimators;
pub mod linalg;
pub mod measures;
pub mod numeric;
pub mod objective;
pub mod precond;
pub mod sinkhorn;
pub mod solver;

mod error;

pub use error::Error;

/// Crate version, re-exported so downstream tools can record it in run
/// manifests without a build-script dependency.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
