//! Cross-module consistency checks. Each test drives a production code
//! path against an independent oracle: a dense factorization against a
//! rank-one recursion, finite differences against analytic derivatives, a
//! two-pass statistic against a running one, or a primal value against a
//! dual one.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use sdot_core::diagnostics::{
    asymptotic_covariances, fd_gradient, fd_hessian, ground_truth, keystone_check, kl_check,
    moment_identity_check, self_concordance_checks,
};
use sdot_core::linalg::{lambda_min, sym_pinv};
use sdot_core::measures::{random_weights, uniform_points, SeededStream, SourceMeasure};
use sdot_core::objective::{
    exact_objective, exact_value, exact_value_and_gradient, CostKind, DiscreteMeasure,
};
use sdot_core::precond::{
    dense_inverse_oracle, regularizer_atom, regularizer_diagonal, regularizer_weight,
    RankOneTerm, SgnInverseState, SnPinvState,
};
use sdot_core::sinkhorn::{cost_matrix, primal_value, sinkhorn_solve};
use sdot_core::solver::{run, AlgorithmConfig, RunSpec, SnParams};

/// A reproducible random instance: `i` source points and `j` target atoms
/// in `[0,1]^d` with random positive weights on both sides.
fn random_instance(seed: u64, i: usize, j: usize, dim: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let mut rng = SeededStream::new(seed, 0).rng();
    let src_pts = uniform_points(&mut rng, i, dim, 0.0, 1.0);
    let src_w = random_weights(&mut rng, i, 0.2, 1.0).unwrap();
    let tgt_pts = uniform_points(&mut rng, j, dim, 0.0, 1.0);
    let tgt_w = random_weights(&mut rng, j, 0.2, 1.0).unwrap();
    (
        DiscreteMeasure::new(src_pts, src_w).unwrap(),
        DiscreteMeasure::new(tgt_pts, tgt_w).unwrap(),
    )
}

/// A random gradient-like vector: difference of two points on the simplex,
/// which is exactly the form the solvers feed the preconditioner.
fn random_phi(rng: &mut rand_chacha::ChaCha8Rng, nu: &DVector<f64>) -> DVector<f64> {
    let j = nu.len();
    let mut pi = DVector::zeros(j);
    let mut total = 0.0;
    for idx in 0..j {
        let u: f64 = rng.random();
        pi[idx] = 0.05 + u;
        total += pi[idx];
    }
    for idx in 0..j {
        pi[idx] = pi[idx] / total - nu[idx];
    }
    pi
}

#[test]
fn gauss_newton_recursion_tracks_the_dense_inverse_at_scale() {
    // J = 20 with thousands of rank-one updates: the running inverse must
    // stay within 1e-8 relative Frobenius error of a from-scratch
    // factorization of the accumulated matrix.
    let j = 20;
    let gamma = 1e-3;
    let beta = 0.49;
    let mut rng = SeededStream::new(2024, 0).rng();
    let nu = {
        let w = random_weights(&mut rng, j, 0.5, 1.5).unwrap();
        w
    };
    let mut state = SgnInverseState::new(j, gamma, beta).unwrap();
    let mut history = Vec::with_capacity(2 * 5000);
    for k in 1..=5000usize {
        let l = regularizer_atom(k, j);
        history.push(RankOneTerm::AtomWeight {
            index: l,
            weight: regularizer_weight(k, j, gamma, beta) * nu[l],
        });
        let phi = random_phi(&mut rng, &nu);
        history.push(RankOneTerm::Gradient(phi.clone()));
        state.update(&phi, &nu).unwrap();
    }
    let oracle = dense_inverse_oracle(j, &history).unwrap();
    let rel = (state.s_inv() - &oracle).norm() / oracle.norm();
    assert!(rel <= 1e-8, "relative error {rel}");
}

#[test]
fn newton_recursion_matches_the_eigendecomposition_pseudoinverse() {
    // J = 10, 200 updates with non-uniform assignments; compare against
    // pinv computed by a full symmetric eigendecomposition, and check the
    // full-space inverse actually inverts the full-space matrix.
    let j = 10;
    let eps = 0.4;
    let mut rng = SeededStream::new(7, 3).rng();
    let mut state = SnPinvState::new(j).unwrap();
    let mut s_full: DMatrix<f64> = DMatrix::identity(j, j);
    for _ in 0..200 {
        let mut pi = DVector::zeros(j);
        let mut total = 0.0;
        for idx in 0..j {
            let u: f64 = rng.random();
            pi[idx] = 0.02 + u;
            total += pi[idx];
        }
        pi /= total;
        state.update(&pi, eps).unwrap();
        for a in 0..j {
            s_full[(a, a)] += pi[a] / eps;
        }
        s_full.ger(-1.0 / eps, &pi, &pi, 1.0);
    }
    let expected = sym_pinv(state.h_forward());
    let err = (state.h_pinv() - &expected).norm();
    assert!(err <= 1e-8, "pseudoinverse deviation {err}");
    let prod = state.s_inv_dense() * &s_full;
    let ident_err = (&prod - DMatrix::identity(j, j)).norm();
    assert!(ident_err <= 1e-8, "full-space identity deviation {ident_err}");
}

#[test]
fn analytic_derivatives_match_finite_differences() {
    let (src, tgt) = random_instance(11, 50, 8, 2);
    let eps = 0.1;
    let mut rng = SeededStream::new(12, 0).rng();
    for _ in 0..20 {
        let mut v = DVector::zeros(8);
        for idx in 0..8 {
            let u: f64 = rng.random();
            v[idx] = (u - 0.5) * 0.6;
        }
        let eval = exact_objective(&src, &tgt, CostKind::SqEuclidean, &v, eps).unwrap();
        let fd_g = fd_gradient(
            &mut |p| exact_value(&src, &tgt, CostKind::SqEuclidean, p, eps).unwrap(),
            &v,
            1e-5,
        );
        let g_err = (&eval.gradient - &fd_g).amax();
        assert!(g_err <= 1e-5, "gradient deviation {g_err}");
        let fd_h = fd_hessian(
            &mut |p| {
                exact_value_and_gradient(&src, &tgt, CostKind::SqEuclidean, p, eps).unwrap().1
            },
            &v,
            1e-5,
        );
        let h_err = (&eval.hessian - &fd_h).amax();
        assert!(h_err <= 1e-5, "hessian deviation {h_err}");
    }
}

#[test]
fn running_estimators_agree_with_two_pass_statistics() {
    // Drive a real solver, capture its score stream through a parallel
    // manual recomputation, and reconcile the running moments.
    let (src, tgt) = random_instance(33, 12, 4, 1);
    let eps = 0.3;
    let source = SourceMeasure::Empirical(src);
    let spec = RunSpec {
        algorithm: AlgorithmConfig::Sn(SnParams::default()),
        eps,
        n_max: 400,
        snapshots: &[400],
        record_sbar: false,
    };
    let snaps = run(
        &spec,
        &source,
        &tgt,
        CostKind::SqEuclidean,
        SeededStream::new(99, 1),
        &mut || 0.0,
    )
    .unwrap();
    let w_hat = snaps[1].w_hat.unwrap();
    let sigma2 = snaps[1].sigma2_hat.unwrap();

    // Replay the identical sample path, tracking scores by hand.
    let mut rng = SeededStream::new(99, 1).rng();
    let mut v = DVector::zeros(4);
    let mut state = SnPinvState::new(4).unwrap();
    let mut scores = Vec::with_capacity(400);
    for _ in 0..400 {
        let x = source.sample(&mut rng);
        let c = sdot_core::objective::cost_row(&x, &tgt, CostKind::SqEuclidean).unwrap();
        let mut pi = DVector::zeros(4);
        let h = sdot_core::objective::eval_sample_into(&c, &v, eps, &tgt, &mut pi);
        scores.push(h);
        let phi = &pi - tgt.weights();
        let dir = state.apply_inverse(&phi);
        v -= dir;
        sdot_core::linalg::project_zero_mean_in_place(&mut v);
        state.update(&pi, eps).unwrap();
    }
    let n = scores.len() as f64;
    let mean: f64 = scores.iter().sum::<f64>() / n;
    let var: f64 = scores.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
    assert!((w_hat - (-mean)).abs() < 1e-12 * (1.0 + mean.abs()));
    assert!((sigma2 - var).abs() < 1e-10 * (1.0 + var), "{sigma2} vs {var}");
    assert!((&snaps[1].v - &v).norm() == 0.0, "replayed iterate differs");
}

#[test]
fn scaling_solution_is_stationary_for_the_semi_dual() {
    let (src, tgt) = random_instance(5, 20, 5, 2);
    let eps = 0.3;
    let solved = sinkhorn_solve(&src, &tgt, CostKind::SqEuclidean, eps, 1e-10, 200_000).unwrap();
    assert!(solved.converged);
    let (_, gradient) =
        exact_value_and_gradient(&src, &tgt, CostKind::SqEuclidean, &solved.v_star, eps).unwrap();
    assert!(gradient.norm() <= 1e-8, "gradient at optimum {}", gradient.norm());
}

#[test]
fn primal_and_dual_costs_reconcile() {
    let (src, tgt) = random_instance(6, 15, 6, 2);
    let eps = 0.2;
    let solved = sinkhorn_solve(&src, &tgt, CostKind::SqEuclidean, eps, 1e-11, 200_000).unwrap();
    let c = cost_matrix(&src, &tgt, CostKind::SqEuclidean).unwrap();
    let primal = primal_value(&solved.coupling, &c, src.weights(), tgt.weights(), eps);
    assert!((primal - solved.w_eps).abs() <= 1e-6, "{primal} vs {}", solved.w_eps);
}

#[test]
fn regularized_cost_respects_its_closed_forms_and_floor() {
    // Single pair: the cost is exactly c - eps. Generally: W >= -eps.
    let src = DiscreteMeasure::uniform(DMatrix::from_row_slice(1, 2, &[0.0, 0.0])).unwrap();
    let tgt = DiscreteMeasure::uniform(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
    for eps in [0.05, 0.5, 5.0] {
        let solved = sinkhorn_solve(&src, &tgt, CostKind::SqEuclidean, eps, 1e-12, 1000).unwrap();
        assert!((solved.w_eps - (25.0 - eps)).abs() <= 1e-12);
    }
    let (src, tgt) = random_instance(8, 10, 4, 2);
    for eps in [0.05, 0.5, 5.0] {
        let solved = sinkhorn_solve(&src, &tgt, CostKind::SqEuclidean, eps, 1e-10, 500_000).unwrap();
        assert!(solved.w_eps >= -eps - 1e-12, "cost {} below floor", solved.w_eps);
    }
}

#[test]
fn limit_matrices_satisfy_identity_keystone_and_lyapunov_in_the_diffuse_regime() {
    // Geometry spread ~ eps/2 keeps assignments diffuse, where dominance
    // provably holds with margin.
    let mut rng = SeededStream::new(3000, 0).rng();
    let eps = 1.0;
    let src_pts = uniform_points(&mut rng, 12, 2, 0.0, 0.7);
    let tgt_pts = uniform_points(&mut rng, 5, 2, 0.0, 0.7);
    let src = DiscreteMeasure::new(src_pts, random_weights(&mut rng, 12, 0.5, 1.5).unwrap()).unwrap();
    let tgt = DiscreteMeasure::new(tgt_pts, random_weights(&mut rng, 5, 0.5, 1.5).unwrap()).unwrap();
    let truth = ground_truth(&src, &tgt, CostKind::SqEuclidean, eps, 1e-11, 500_000).unwrap();

    let identity = moment_identity_check(&truth, tgt.weights(), eps, 1e-8);
    assert!(identity.pass, "moment identity deviation {}", identity.value);

    let keystone = keystone_check(&truth, tgt.weights(), eps);
    assert!(keystone.pass, "dominance gap {}", keystone.gap_lambda_min);

    let cov = asymptotic_covariances(&truth).unwrap();
    assert!(cov.lyapunov_residual <= 1e-8, "lyapunov residual {}", cov.lyapunov_residual);
}

#[test]
fn regularity_suite_holds_at_random_points_of_a_desk_instance() {
    let (src, tgt) = random_instance(21, 30, 6, 2);
    let eps = 0.5;
    let truth = ground_truth(&src, &tgt, CostKind::SqEuclidean, eps, 1e-11, 500_000).unwrap();
    let mut rng = SeededStream::new(22, 0).rng();
    for trial in 0..40 {
        let radius: f64 = if trial % 5 == 4 { 4.0 } else { 0.9 };
        let mut v = truth.v_star.clone();
        for idx in 0..6 {
            let u: f64 = rng.random();
            v[idx] += radius * (u - 0.5);
        }
        sdot_core::linalg::project_zero_mean_in_place(&mut v);
        let checks =
            self_concordance_checks(&v, &src, &tgt, CostKind::SqEuclidean, eps, &truth).unwrap();
        for check in &checks {
            assert!(
                check.pass,
                "{} violated: value {} bound {}",
                check.name, check.value, check.bound
            );
        }
        if let Some(kl) = kl_check(&v, &src, &tgt, CostKind::SqEuclidean, eps, &truth).unwrap() {
            assert!(kl.pass, "domination violated: {} < {}", kl.value, kl.bound);
        }
    }
}

#[test]
fn gauss_newton_matrix_respects_the_regularizer_floor() {
    // With zero gradients the forward matrix is exactly I + R_n, so its
    // smallest eigenvalue is 1 + the smallest accumulated diagonal mass;
    // with real gradients the floor still holds since outer products only
    // add curvature. The grouped closed form overstates the mass on the
    // last atom by one term, checked with exactly that allowance.
    let j = 4;
    let gamma = 0.8;
    let beta = 0.3;
    let n = 100;
    let nu = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);

    let diag = regularizer_diagonal(n, gamma, beta, &nu);
    let exact_floor = 1.0 + diag.min();

    let mut zero_state = SgnInverseState::new(j, gamma, beta).unwrap();
    let mut live_state = SgnInverseState::new(j, gamma, beta).unwrap();
    let mut rng = SeededStream::new(55, 0).rng();
    let zero = DVector::zeros(j);
    for _ in 0..n {
        zero_state.update(&zero, &nu).unwrap();
        let phi = random_phi(&mut rng, &nu);
        live_state.update(&phi, &nu).unwrap();
    }
    let lam_zero = lambda_min(zero_state.s_matrix());
    assert!((lam_zero - exact_floor).abs() <= 1e-12, "{lam_zero} vs {exact_floor}");
    let lam_live = lambda_min(live_state.s_matrix());
    assert!(lam_live >= exact_floor - 1e-9, "{lam_live} below exact floor {exact_floor}");

    // Grouped form: floor 1 + gamma*min(nu)*sum_{m=1}^{p} m^{-beta} with a
    // one-term allowance gamma*max(nu)*(1 - (p+1)^{-beta}).
    let p = n / j;
    let partial: f64 = (1..=p).map(|m| (m as f64).powf(-beta)).sum();
    let grouped_floor = 1.0 + gamma * nu.min() * partial;
    let allowance = gamma * nu.max() * (1.0 - ((p + 1) as f64).powf(-beta));
    assert!(
        lam_zero >= grouped_floor - allowance - 1e-12,
        "{lam_zero} below grouped floor {grouped_floor} - {allowance}"
    );
}

#[test]
fn newton_solver_reaches_the_scaling_optimum_on_a_toy_instance() {
    let src_support = DiscreteMeasure::new(
        DMatrix::from_row_slice(3, 1, &[0.0, 0.4, 1.0]),
        DVector::from_vec(vec![0.5, 0.2, 0.3]),
    )
    .unwrap();
    let tgt = DiscreteMeasure::new(
        DMatrix::from_row_slice(2, 1, &[0.2, 0.8]),
        DVector::from_vec(vec![0.45, 0.55]),
    )
    .unwrap();
    let eps = 0.1;
    let truth = ground_truth(&src_support, &tgt, CostKind::SqEuclidean, eps, 1e-12, 100_000)
        .unwrap();
    let source = SourceMeasure::Empirical(src_support);
    let spec = RunSpec {
        algorithm: AlgorithmConfig::Sn(SnParams::default()),
        eps,
        n_max: 10_000,
        snapshots: &[10_000],
        record_sbar: false,
    };
    let snaps = run(
        &spec,
        &source,
        &tgt,
        CostKind::SqEuclidean,
        SeededStream::new(123, 0),
        &mut || 0.0,
    )
    .unwrap();
    let err = (&snaps[1].v - &truth.v_star).norm();
    assert!(err <= 0.05, "newton iterate still {err} from optimum");
}
