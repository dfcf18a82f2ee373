//! Simulation-layer tests: degenerate exact cases, reproducibility across
//! thread counts, filter statistics against the solved covariance, the
//! discrete-Kalman oracle, limiting-cost quadrature collapse, and the
//! decoupling relation along simulated innovation paths.

use mfstack_core::filtersim::{
    filter_consistency_check, limiting_costs, perturbation_cost_follower, replay_filtered_adjoint,
    ClosedLoop, Coupling, Perturbation, SimConfig,
};
use mfstack_core::filtersim::simulate_population;
use mfstack_core::model::ScalarModel;
use mfstack_core::path::MatrixPath;
use mfstack_core::solvers::SolverOptions;
use mfstack_core::strategy::{decoupling_residual, solve_stackelberg};
use mfstack_core::testing::scalar_test_model;
use nalgebra::DMatrix;

fn solve(model: &ScalarModel) -> (mfstack_core::model::ModelSpec, mfstack_core::strategy::StackelbergSolution) {
    let spec = model.build();
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    (spec, sol)
}

fn quiet_model() -> ScalarModel {
    // No noise, no affine drives, zero initial data.
    ScalarModel {
        a: -0.5,
        a0: -0.4,
        b_ctrl: 1.0,
        b0_ctrl: 1.0,
        q: 1.0,
        q0: 1.0,
        g: 0.3,
        gamma2_pop: 0.2,
        gamma3_lead: 0.2,
        gamma0_pop: 0.2,
        h: 1.0,
        h0: 1.0,
        ..Default::default()
    }
}

#[test]
fn zero_data_simulates_to_exact_zero() {
    let (spec, sol) = solve(&quiet_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let result = simulate_population(&spec, &cl, &SimConfig::new(4, 3, 7)).unwrap();
    assert_eq!(result.cost_leader.value, 0.0);
    assert_eq!(result.cost_follower.value, 0.0);
    assert_eq!(result.sup_gap_state_avg, 0.0);
    for r in &result.records {
        assert!(r.x0.iter().all(|v| v.amax() == 0.0));
        assert!(r.u0.iter().all(|v| v.amax() == 0.0));
        assert!(r.x_i.iter().all(|v| v.amax() == 0.0));
        assert!(r.u_i.iter().all(|v| v.amax() == 0.0));
    }
}

#[test]
fn noise_free_population_tracks_the_deterministic_limit() {
    // Nonzero initial data, no noise: every follower, its filter and the
    // mean curve coincide up to time discretization.
    let gap_at = |steps: usize| -> f64 {
        let mut m = quiet_model();
        m.xi = 1.3;
        m.xi0 = -0.7;
        m.steps = steps;
        let (spec, sol) = solve(&m);
        let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
        let result = simulate_population(&spec, &cl, &SimConfig::new(3, 2, 1)).unwrap();
        let mut worst = 0.0f64;
        for r in &result.records {
            for k in 0..spec.grid.len() {
                let e = cl.means.e_xi.at(k)[(0, 0)];
                worst = worst.max((r.x_i[k][0] - e).abs());
                worst = worst.max((r.x_i[k][0] - r.x_hat_i[k][0]).abs());
            }
        }
        worst
    };
    let coarse = gap_at(100);
    let fine = gap_at(200);
    assert!(coarse < 0.05, "coarse deterministic gap {coarse}");
    assert!(fine < 0.6 * coarse, "no first-order decay: {coarse} -> {fine}");
}

#[test]
fn simulation_is_bit_reproducible_across_thread_counts() {
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let cfg = SimConfig::new(5, 16, 99);

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_population(&spec, &cl, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.cost_leader.value.to_bits(), b.cost_leader.value.to_bits());
    assert_eq!(a.cost_follower.value.to_bits(), b.cost_follower.value.to_bits());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        for (va, vb) in ra.x_i.iter().zip(&rb.x_i) {
            assert_eq!(va, vb);
        }
    }
    // And the same pool size twice is identical as well.
    let c = run(4);
    assert_eq!(b.cost_leader.value.to_bits(), c.cost_leader.value.to_bits());
}

#[test]
fn filter_error_is_unbiased_and_matches_the_covariance_layer() {
    // Limiting system: the Kalman filter is exact there, so the ensemble
    // filter-error mean vanishes within MC error and the error covariance
    // matches the solved second moment.
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let mut cfg = SimConfig::new(1, 2000, 31);
    cfg.coupling = Coupling::Limiting;
    let result = simulate_population(&spec, &cl, &cfg).unwrap();

    let paths = result.paths as f64;
    for k in (0..spec.grid.len()).step_by(20) {
        let pi = sol.bundle.pi.at(k)[(0, 0)];
        let mean = result.err_mean[k][0];
        let se_mean = (pi.max(1e-12) / paths).sqrt();
        assert!(
            mean.abs() <= 4.0 * se_mean + 1e-9,
            "node {k}: filter error mean {mean} vs se {se_mean}"
        );
        let cov = result.err_cov[k][(0, 0)];
        // Var of a sample variance of Gaussians: 2 sigma^4 / P.
        let se_cov = (2.0 * pi * pi / paths).sqrt();
        assert!(
            (cov - pi).abs() <= 5.0 * se_cov + 5e-4,
            "node {k}: cov {cov} vs Pi {pi} (se {se_cov})"
        );
    }
}

#[test]
fn discrete_kalman_gap_shrinks_at_first_order() {
    // sigma = sigma_bar = f = H = 1, A = 0 on [0, 1]. The gap constant is
    // realization-dependent, so average over seeds before comparing steps.
    let gap_at = |steps: usize| -> f64 {
        let m = ScalarModel {
            sigma: 1.0,
            sigma_bar: 1.0,
            h: 1.0,
            f_noise: 1.0,
            q: 1.0,
            b_ctrl: 1.0,
            xi: 0.5,
            steps,
            ..Default::default()
        };
        let (spec, sol) = solve(&m);
        let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
        (0..24)
            .map(|seed| filter_consistency_check(&spec, &cl, 2, seed).unwrap().sup_gap)
            .sum::<f64>()
            / 24.0
    };
    let coarse = gap_at(100);
    let fine = gap_at(400);
    assert!(coarse < 0.1, "discrete-continuous gap too large: {coarse}");
    assert!(fine < 0.5 * coarse, "gap not shrinking with dt: {coarse} -> {fine}");
}

#[test]
fn innovations_are_white_and_orthogonal_to_the_filter() {
    let mut m = scalar_test_model();
    m.steps = 400;
    let (spec, sol) = solve(&m);
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let report = filter_consistency_check(&spec, &cl, 4, 5).unwrap();
    assert!(!report.innovations_zero);
    let bound = 3.0 / (spec.grid.steps() as f64).sqrt();
    for (j, rho) in report.innovation_lag1.iter().enumerate() {
        assert!(rho.abs() <= bound, "component {j}: lag-1 autocorr {rho} vs {bound}");
    }
    for (j, rho) in report.innovation_state_corr.iter().enumerate() {
        assert!(rho.abs() <= bound, "component {j}: state corr {rho} vs {bound}");
    }
}

#[test]
fn zero_state_noise_makes_the_filters_exact() {
    // With sigma = sigma_bar = 0 both filters have zero gain and identical
    // deterministic recursions: the discrete-continuous gap is exactly zero
    // and the filter error vanishes. The innovation process itself reduces
    // to the raw observation Brownian increments (f stays invertible), so
    // it is white but not identically zero.
    let (spec, sol) = solve(&quiet_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let report = filter_consistency_check(&spec, &cl, 2, 3).unwrap();
    assert_eq!(report.sup_gap, 0.0);
    let bound = 3.0 / (spec.grid.steps() as f64).sqrt();
    for rho in &report.innovation_lag1 {
        assert!(rho.abs() <= bound);
    }
    let result = simulate_population(&spec, &cl, &SimConfig::new(2, 2, 3)).unwrap();
    for r in &result.records {
        for k in 0..spec.grid.len() {
            assert_eq!(r.x_i[k], r.x_hat_i[k]);
        }
    }
}

#[test]
fn limiting_costs_vanish_on_the_zero_model() {
    let (spec, sol) = solve(&quiet_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let (j0, ji) = limiting_costs(&spec, &cl, 8, 5).unwrap();
    assert_eq!(j0.value, 0.0);
    assert_eq!(ji.value, 0.0);
}

#[test]
fn limiting_costs_agree_across_seeds() {
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let (j0a, jia) = limiting_costs(&spec, &cl, 600, 11).unwrap();
    let (j0b, jib) = limiting_costs(&spec, &cl, 600, 12).unwrap();
    let tol0 = 3.0 * (j0a.std_error.powi(2) + j0b.std_error.powi(2)).sqrt();
    let toli = 3.0 * (jia.std_error.powi(2) + jib.std_error.powi(2)).sqrt();
    assert!((j0a.value - j0b.value).abs() <= tol0, "J0 seeds differ: {} vs {}", j0a.value, j0b.value);
    assert!((jia.value - jib.value).abs() <= toli, "Ji seeds differ: {} vs {}", jia.value, jib.value);
}

#[test]
fn deterministic_limiting_costs_have_zero_standard_error() {
    let mut m = quiet_model();
    m.xi = 1.0;
    m.xi0 = -0.5;
    m.eta2 = 0.3;
    m.eta0 = 0.2;
    let (spec, sol) = solve(&m);
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let (j0, ji) = limiting_costs(&spec, &cl, 4, 9).unwrap();
    assert_eq!(j0.std_error, 0.0);
    assert_eq!(ji.std_error, 0.0);
    assert!(j0.per_path.iter().all(|v| *v == j0.per_path[0]));
    assert!(ji.per_path.iter().all(|v| *v == ji.per_path[0]));
    assert!(j0.value.is_finite() && ji.value.is_finite());
}

#[test]
fn zero_eps_perturbation_reproduces_the_baseline_cost() {
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let pert = Perturbation {
        eps: 0.0,
        affine: MatrixPath::scalar(&spec.grid, 1.0),
        feedback: DMatrix::from_element(1, 1, 0.5),
    };
    let out = perturbation_cost_follower(&spec, &cl, 4, 32, 3, &pert).unwrap();
    assert_eq!(out.diff_mean, 0.0);
    assert_eq!(out.baseline.value, out.perturbed.value);
}

#[test]
fn paired_costs_bracket_the_baseline_convexly() {
    // Second difference J(+eps) + J(-eps) - 2 J(0) should be nonnegative up
    // to Monte Carlo error under common random numbers.
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let dir = |eps: f64| Perturbation {
        eps,
        affine: MatrixPath::scalar(&spec.grid, 1.0),
        feedback: DMatrix::from_element(1, 1, 0.3),
    };
    let plus = perturbation_cost_follower(&spec, &cl, 4, 300, 21, &dir(0.25)).unwrap();
    let minus = perturbation_cost_follower(&spec, &cl, 4, 300, 21, &dir(-0.25)).unwrap();
    let second_diff = plus.diff_mean + minus.diff_mean;
    let se = (plus.diff_se.powi(2) + minus.diff_se.powi(2)).sqrt();
    assert!(second_diff >= -3.0 * se, "second difference {second_diff} vs se {se}");
}

#[test]
fn decoupling_residual_is_zero_on_the_quiet_model() {
    let (spec, sol) = solve(&quiet_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let mut cfg = SimConfig::new(2, 2, 13);
    cfg.capture_increments = true;
    let result = simulate_population(&spec, &cl, &cfg).unwrap();
    let rec = &result.records[0];
    let x_hat = rec.x_hat_i.clone();
    let cap = rec.capture.as_ref().unwrap();
    let p_hat = replay_filtered_adjoint(&spec, &sol, &x_hat, &cap.innovations).unwrap();
    let resid = decoupling_residual(&spec, &sol.bundle, &sol.means, &x_hat, &p_hat).unwrap();
    assert_eq!(resid, 0.0);
}

#[test]
fn decoupling_residual_decays_with_the_step() {
    let resid_at = |steps: usize| -> f64 {
        let mut m = scalar_test_model();
        m.steps = steps;
        let (spec, sol) = solve(&m);
        let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
        let mut total = 0.0;
        let paths = 24;
        for seed in 0..paths {
            let mut cfg = SimConfig::new(3, 2, 1000 + seed);
            cfg.capture_increments = true;
            let result = simulate_population(&spec, &cl, &cfg).unwrap();
            let rec = &result.records[0];
            let cap = rec.capture.as_ref().unwrap();
            let p_hat =
                replay_filtered_adjoint(&spec, &sol, &rec.x_hat_i, &cap.innovations).unwrap();
            total += decoupling_residual(&spec, &sol.bundle, &sol.means, &rec.x_hat_i, &p_hat)
                .unwrap();
        }
        total / paths as f64
    };
    let coarse = resid_at(150);
    let fine = resid_at(300);
    assert!(coarse < 0.5, "decoupling residual too large: {coarse}");
    assert!(fine < 0.75 * coarse, "no decay with dt: {coarse} -> {fine}");
}

#[test]
fn adjoint_terminal_condition_matches_by_construction() {
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let mut cfg = SimConfig::new(3, 2, 19);
    cfg.capture_increments = true;
    let result = simulate_population(&spec, &cl, &cfg).unwrap();
    let rec = &result.records[0];
    let cap = rec.capture.as_ref().unwrap();
    let p_hat = replay_filtered_adjoint(&spec, &sol, &rec.x_hat_i, &cap.innovations).unwrap();

    let kt = spec.grid.steps();
    let e_xi = sol.means.e_xi.at(kt).column(0).into_owned();
    let e_x0 = sol.means.e_x0.at(kt).column(0).into_owned();
    let recon = sol.bundle.p1.at(kt) * (&rec.x_hat_i[kt] - &e_xi)
        + sol.bundle.p2.at(kt) * &e_xi
        + sol.bundle.p3.at(kt) * &e_x0
        + sol.bundle.phi.at(kt).column(0).into_owned();
    assert!((&p_hat[kt] - recon).amax() < 1e-12);
}

#[test]
fn iid_population_average_obeys_the_strong_law_rate() {
    // In the limiting system the followers are i.i.d., so the sample second
    // moment of |x_avg(T) - E x_i(T)| decays exactly like 1/N.
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    let moment_at = |n: usize| -> f64 {
        let mut cfg = SimConfig::new(n, 300, 77);
        cfg.coupling = Coupling::Limiting;
        let result = simulate_population(&spec, &cl, &cfg).unwrap();
        let kt = spec.grid.len() - 1;
        let e = cl.means.e_xi.at(kt)[(0, 0)];
        result.records.iter().map(|r| (r.x_avg[kt][0] - e).powi(2)).sum::<f64>()
            / result.records.len() as f64
    };
    let ns = [8usize, 16, 32, 64, 128, 256];
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = ns.iter().map(|&n| moment_at(n)).collect();
    let fit = mfstack_core::experiments::log_log_fit(&xs, &ys).expect("non-degenerate");
    assert!(
        (fit.slope + 1.0).abs() <= 0.35,
        "strong-law slope {} not within -1 +/- 0.35 ({ys:?})",
        fit.slope
    );
}

#[test]
fn perturbation_parabola_vertex_sits_at_the_baseline() {
    // Near-uninformative observations (large f): the filter barely moves and
    // the cost is a clean quadratic in the deviation size; the fitted vertex
    // must sit at zero within the Monte Carlo tolerance.
    let mut m = scalar_test_model();
    m.f_noise = 50.0;
    m.f0_noise = 50.0;
    let (spec, sol) = solve(&m);
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();

    let dir = |eps: f64| Perturbation {
        eps,
        affine: MatrixPath::scalar(&spec.grid, 1.0),
        feedback: DMatrix::zeros(1, 1),
    };
    let eps_grid = [-0.2, -0.1, 0.1, 0.2];
    let mut diffs = Vec::new();
    let mut se_max = 0.0f64;
    for &e in &eps_grid {
        let out = perturbation_cost_follower(&spec, &cl, 8, 400, 3, &dir(e)).unwrap();
        diffs.push(out.diff_mean);
        se_max = se_max.max(out.diff_se);
    }
    // Least squares for d(eps) = b eps + a eps^2 (d(0) = 0 by construction).
    let (mut sxx, mut sxy, mut sx3, mut sx4, mut sx2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&e, &d) in eps_grid.iter().zip(&diffs) {
        sxx += e * e;
        sxy += e * d;
        sx3 += e * e * e;
        sx4 += e * e * e * e;
        sx2y += e * e * d;
    }
    let det = sxx * sx4 - sx3 * sx3;
    let b = (sxy * sx4 - sx2y * sx3) / det;
    let a = (sxx * sx2y - sx3 * sxy) / det;
    assert!(a > 0.0, "curvature should be positive, got {a}");
    let vertex = -b / (2.0 * a);
    // Tolerance: slope noise ~ se / eps-scale, mapped through the curvature.
    let tol = (3.0 * se_max / 0.1) / (2.0 * a);
    assert!(
        vertex.abs() <= tol.max(0.02),
        "parabola vertex {vertex:.4} (tolerance {tol:.4}, curvature {a:.3})"
    );
}

#[test]
fn population_size_zero_and_single_path_are_rejected() {
    let (spec, sol) = solve(&scalar_test_model());
    let cl = ClosedLoop::from_solution(&spec, &sol).unwrap();
    assert!(simulate_population(&spec, &cl, &SimConfig::new(0, 4, 1)).is_err());
    assert!(simulate_population(&spec, &cl, &SimConfig::new(3, 1, 1)).is_err());
    let result = simulate_population(&spec, &cl, &SimConfig::new(1, 4, 1)).unwrap();
    assert!(result.degenerate_population);
}
