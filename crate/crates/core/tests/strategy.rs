//! Strategy assembly tests: block structure of the dimension-expanded
//! system, gain-formula audits against direct transcriptions, and the
//! cross-representation consistency of the deterministic layers.

use mfstack_core::experiments::{build_sticky_model, StickyPriceParams};
use mfstack_core::model::{derive_coefficients, CoefficientInverses, ScalarModel};
use mfstack_core::path::MatrixPath;
use mfstack_core::solvers::SolverOptions;
use mfstack_core::strategy::{build_augmented_system, solve_stackelberg};
use mfstack_core::testing::{random_model, scalar_test_model};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn augmented_blocks_vanish_on_the_zero_model() {
    let spec = ScalarModel::default().build();
    let d = derive_coefficients(&spec).unwrap();
    let inv = CoefficientInverses::compute(&spec).unwrap();
    let zero = MatrixPath::scalar(&spec.grid, 0.0);
    let aug = build_augmented_system(&spec, &d, &inv, &zero, &zero, &zero).unwrap();
    for p in [&aug.a0, &aug.a0_bar, &aug.c0, &aug.b0, &aug.s0, &aug.b0_bar, &aug.q0, &aug.q0_bar, &aug.d0, &aug.d0_bar, &aug.sigma_tilde] {
        assert_eq!(p.max_abs(), 0.0);
    }
    assert_eq!(aug.g0_terminal.amax(), 0.0);
    assert_eq!(aug.g1_terminal.amax(), 0.0);
    assert_eq!(aug.g2_terminal.amax(), 0.0);
}

#[test]
fn skew_coupling_block_has_the_documented_pattern() {
    // n = k = 1, B = R = 1: entries (2,3) = -BR^{-1}B' and (3,2) = +BR^{-1}B'.
    let spec = ScalarModel { b_ctrl: 1.0, ..Default::default() }.build();
    let d = derive_coefficients(&spec).unwrap();
    let inv = CoefficientInverses::compute(&spec).unwrap();
    let zero = MatrixPath::scalar(&spec.grid, 0.0);
    let aug = build_augmented_system(&spec, &d, &inv, &zero, &zero, &zero).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
    assert_eq!(aug.c0.at(0), &expected);
}

#[test]
fn backward_control_loading_stacks_as_documented() {
    // S0 = 1, Gmean0 = 0.5, Gpop0 = 0.25, P3 = 2, B0 = 3 -> (-0.5, -0.25, 6).
    let spec = ScalarModel {
        s0: 1.0,
        gamma0_mean: 0.5,
        gamma0_pop: 0.25,
        b0_ctrl: 3.0,
        q0: 1.0,
        ..Default::default()
    }
    .build();
    let d = derive_coefficients(&spec).unwrap();
    let inv = CoefficientInverses::compute(&spec).unwrap();
    let zero = MatrixPath::scalar(&spec.grid, 0.0);
    let two = MatrixPath::scalar(&spec.grid, 2.0);
    let aug = build_augmented_system(&spec, &d, &inv, &zero, &two, &zero).unwrap();
    let b0_bar = aug.b0_bar.at(0);
    assert_eq!(b0_bar[(0, 0)], -0.5);
    assert_eq!(b0_bar[(1, 0)], -0.25);
    assert_eq!(b0_bar[(2, 0)], 6.0);
}

#[test]
fn structurally_zero_entries_stay_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, k) in [(1usize, 1usize), (2, 1), (2, 2), (3, 2)] {
        let spec = random_model(&mut rng, n, k, 40);
        let sol = match solve_stackelberg(&spec, &SolverOptions::default()) {
            Ok(s) => s,
            Err(e) => panic!("random model (n={n}, k={k}) failed: {e}"),
        };
        assert!(sol.aug.sparsity_ok(), "sparsity violated at n={n}, k={k}");
    }
}

#[test]
fn a2_invariant_holds_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = random_model(&mut rng, 2, 2, 40);
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    let idn = DMatrix::<f64>::identity(2, 2);
    for k in 0..spec.grid.len() {
        let b = spec.follower.b_ctrl.at(k);
        let r_inv = sol.inverses.r_inv.at(k);
        let expected = spec.follower.a.at(k) + spec.follower.a_bar.at(k)
            - b * r_inv * b.transpose() * sol.bundle.p2.at(k)
            - b * r_inv
                * spec.follower_cost.s.at(k)
                * (&idn - spec.follower_cost.gamma_mean.at(k));
        assert!((sol.aug.a2.at(k) - expected).amax() < 1e-13, "node {k}");
    }
}

#[test]
fn follower_gain_matches_direct_transcription() {
    // Two independent code paths: the gain schedule applied to random
    // vectors vs a term-by-term evaluation of the feedback formula.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (n, k) in [(1usize, 1usize), (2, 1), (3, 2), (3, 3)] {
        let spec = random_model(&mut rng, n, k, 40);
        let sol = match solve_stackelberg(&spec, &SolverOptions::default()) {
            Ok(s) => s,
            Err(e) => panic!("random model (n={n}, k={k}) failed: {e}"),
        };
        use rand::Rng;
        for node in [0, spec.grid.len() / 2, spec.grid.len() - 1] {
            let x_hat = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let e_xi = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let e_x0 = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let via_gains = sol.follower_gains.control(node, &x_hat, &e_xi, &e_x0);

            let b_t = spec.follower.b_ctrl.at(node).transpose();
            let s = spec.follower_cost.s.at(node);
            let direct = -(sol.inverses.r_inv.at(node)
                * ((&b_t * sol.bundle.p1.at(node) + s) * &x_hat
                    + (&b_t * (sol.bundle.p2.at(node) - sol.bundle.p1.at(node))
                        - s * spec.follower_cost.gamma_mean.at(node))
                        * &e_xi
                    + &b_t * sol.bundle.p3.at(node) * &e_x0
                    + &b_t * sol.bundle.phi.at(node).column(0).into_owned()));
            assert!(
                (&via_gains - &direct).amax() < 1e-12,
                "n={n} k={k} node={node}: {:?} vs {:?}",
                via_gains,
                direct
            );
        }
    }
}

#[test]
fn leader_gain_matches_direct_transcription() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let spec = random_model(&mut rng, 2, 2, 40);
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    use rand::Rng;
    for node in [0, 20, 40] {
        let x_check = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
        let e_x = DVector::from_fn(6, |_, _| rng.gen_range(-2.0..2.0));
        let via_gains = sol.leader_gains.control(node, &x_check, &e_x);
        let direct = (sol.aug.gain_state.at(node)
            + sol.aug.gain_adjoint.at(node) * sol.bundle.sigma1.at(node))
            * &x_check
            + (sol.aug.gain_mean.at(node)
                + sol.aug.gain_adjoint.at(node)
                    * (sol.bundle.sigma2.at(node) - sol.bundle.sigma1.at(node)))
                * &e_x
            + sol.aug.gain_adjoint.at(node) * sol.bundle.psi.at(node).column(0).into_owned();
        assert!((&via_gains - &direct).amax() < 1e-12, "node {node}");
    }
}

#[test]
fn stacked_mean_blocks_agree_with_the_joint_pair() {
    // Blocks 1-2 of E[X] and the 2n-dimensional joint integration solve the
    // same coupled ODE in different coordinates; the agreement tolerance
    // assumes a resolved grid (the gap contracts at second order in dt).
    let mut fine = scalar_test_model();
    fine.steps = 1600;
    for spec in [fine.build(), {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        random_model(&mut rng, 2, 1, 1600)
    }] {
        let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
        let n = spec.n;
        let mut worst = 0.0f64;
        for k in 0..spec.grid.len() {
            let stacked = sol.means.e_x0_aug.at(k);
            let d0 = (stacked.view((0, 0), (n, 1)) - sol.means.e_x0.at(k)).amax();
            let d1 = (stacked.view((n, 0), (n, 1)) - sol.means.e_xi.at(k)).amax();
            worst = worst.max(d0.max(d1));
        }
        assert!(worst < 1e-8, "cross-representation gap {worst}");
    }
}

#[test]
fn phi_equals_third_block_of_the_adjoint_reconstruction() {
    for spec in [scalar_test_model().build(), {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        random_model(&mut rng, 2, 1, 100)
    }, {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        random_model(&mut rng, 3, 2, 100)
    }] {
        let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
        let n = spec.n;
        let mut worst = 0.0f64;
        for k in 0..spec.grid.len() {
            let adjoint = sol.bundle.sigma2.at(k) * sol.means.e_x0_aug.at(k)
                + sol.bundle.psi.at(k);
            let third = adjoint.view((2 * n, 0), (n, 1));
            worst = worst.max((third - sol.bundle.phi.at(k)).amax());
        }
        assert!(worst < 1e-6, "phi reconstruction gap {worst} (n={n})");
    }
}

#[test]
fn zero_initial_data_keeps_all_means_at_zero() {
    let spec = ScalarModel {
        a: -0.5,
        a0: -0.4,
        b_ctrl: 1.0,
        b0_ctrl: 1.0,
        q: 1.0,
        q0: 1.0,
        g: 0.2,
        gamma2_pop: 0.3,
        gamma3_lead: 0.3,
        gamma0_pop: 0.3,
        sigma: 0.3,
        h: 1.0,
        h0: 1.0,
        ..Default::default()
    }
    .build();
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    assert_eq!(sol.means.e_x0_aug.max_abs(), 0.0);
    assert_eq!(sol.means.eu0.max_abs(), 0.0);
    assert_eq!(sol.means.e_xi.max_abs(), 0.0);
    assert_eq!(sol.bundle.phi.max_abs(), 0.0);
}

#[test]
fn sticky_mean_curves_have_the_documented_shape() {
    let params = StickyPriceParams { steps: 500, ..Default::default() };
    let spec = build_sticky_model(&params).unwrap();
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    let g = &spec.grid;
    let at = |path: &MatrixPath, t: f64| path.eval(g, t)[(0, 0)];

    // Local prices rise from 8 toward a plateau, then move again near T.
    let e_xi = &sol.means.e_xi;
    assert_eq!(at(e_xi, 0.0), 8.0);
    assert!(at(e_xi, 1.0) > 10.0, "price should have risen by t=1");
    let plateau_drift = (at(e_xi, 3.0) - at(e_xi, 2.5)).abs();
    assert!(plateau_drift < 0.02, "plateau drift {plateau_drift}");
    let terminal_move = (at(e_xi, 5.0) - at(e_xi, 3.0)).abs();
    assert!(terminal_move > 5.0 * plateau_drift, "no terminal movement");

    // Headquarters price starts above the local prices and declines first.
    let e_x0 = &sol.means.e_x0;
    assert_eq!(at(e_x0, 0.0), 14.0);
    assert!(at(e_x0, 1.0) < 13.0);

    // Headquarters mean output: high at release, dips, then builds back up
    // over the bulk of the horizon (the last instants revert to the myopic
    // profit-maximizing quantity).
    let eu0 = &sol.means.eu0;
    let initial = at(eu0, 0.0);
    let dip = at(eu0, 0.5);
    let rebuilt = at(eu0, 3.0);
    assert!(initial > dip + 0.5, "no initial decline: {initial} vs {dip}");
    assert!(rebuilt > dip + 0.2, "no rebuild after the dip: {rebuilt} vs {dip}");
    let sup = (0..g.len()).map(|k| eu0.at(k)[(0, 0)]).fold(f64::NEG_INFINITY, f64::max);
    assert!(initial >= sup - 1e-9, "initial output should be the maximum");

    // Follower mean output is low at release and rises into the terminal
    // sell-off.
    let e_xi0 = sol.means.e_xi.at(0).column(0).into_owned();
    let e_x00 = sol.means.e_x0.at(0).column(0).into_owned();
    let u_first = sol.follower_gains.control(0, &e_xi0, &e_xi0, &e_x00)[0];
    let kt = g.len() - 1;
    let e_xit = sol.means.e_xi.at(kt).column(0).into_owned();
    let e_x0t = sol.means.e_x0.at(kt).column(0).into_owned();
    let u_last = sol.follower_gains.control(kt, &e_xit, &e_xit, &e_x0t)[0];
    assert!(u_first < 2.0, "initial local output should be low, got {u_first}");
    assert!(u_last > u_first + 2.0, "terminal local output should rise, got {u_last}");
}
