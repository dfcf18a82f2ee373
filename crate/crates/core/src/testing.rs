//! Shared fixtures for unit, integration and acceptance tests.
//!
//! Not part of the solver pipeline; exposed so that every test target can
//! build the same benchmark models and random assumption-satisfying specs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::grid::TimeGrid;
use crate::model::{
    FollowerCost, FollowerDynamics, FollowerTerminalCost, LeaderCost, LeaderDynamics,
    LeaderTerminalCost, ModelSpec, ObservationModel, ScalarModel,
};
use crate::path::MatrixPath;

/// Scalar benchmark with every coupling channel switched on at mild values.
///
/// Used by the decay-rate and equilibrium-margin experiments; solvable, with
/// a well-conditioned certificate and a non-degenerate filter.
pub fn scalar_test_model() -> ScalarModel {
    ScalarModel {
        t_end: 1.0,
        steps: 200,
        a0: -0.5,
        a0_bar: 0.2,
        c0: 0.3,
        b0_ctrl: 1.0,
        b0_aff: 0.1,
        sigma0: 0.3,
        sigma0_bar: 0.3,
        xi0: 1.2,
        h0: 1.0,
        h0_bar: 0.1,
        i0_pop: 0.1,
        h0_aff: 0.05,
        f0_noise: 0.5,
        a: -1.0,
        a_bar: 0.2,
        c: 0.3,
        f_lead: 0.4,
        b_ctrl: 1.0,
        b_aff: 0.1,
        sigma: 0.4,
        sigma_bar: 0.4,
        xi: 0.8,
        h: 1.0,
        h_bar: 0.1,
        i_pop: 0.1,
        h_aff: 0.05,
        f_noise: 0.5,
        q0: 1.0,
        r0: 1.0,
        s0: 0.2,
        gamma0_pop: 0.3,
        gamma0_mean: 0.2,
        eta0: 0.5,
        g0: 0.5,
        gamma1_pop: 0.2,
        gamma1_mean: 0.1,
        eta1: 0.2,
        q: 1.0,
        r: 1.0,
        s: 0.2,
        gamma2_pop: 0.3,
        gamma2_mean: 0.2,
        gamma3_lead: 0.3,
        gamma3_lead_mean: 0.1,
        eta2: 0.3,
        g: 0.5,
        gamma4_pop: 0.2,
        gamma4_mean: 0.1,
        gamma5_lead: 0.1,
        gamma5_lead_mean: 0.1,
        eta4: 0.2,
    }
}

/// Variant of [`scalar_test_model`] for the population-size decay sweeps.
///
/// The mean-weight channels are switched off: the centralized cost estimator
/// plugs in cross-path sample means wherever the functional reads `E[x]`,
/// and that plug-in noise is independent of the population size, so with
/// nonzero mean weights it floors the `1/sqrt(N)` cost-gap statistic long
/// before N = 256. The population couplings all stay on.
pub fn decay_test_model() -> ScalarModel {
    ScalarModel {
        gamma0_mean: 0.0,
        gamma1_mean: 0.0,
        gamma2_mean: 0.0,
        gamma3_lead_mean: 0.0,
        gamma4_mean: 0.0,
        gamma5_lead_mean: 0.0,
        ..scalar_test_model()
    }
}

fn rand_matrix(rng: &mut dyn rand::RngCore, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn rand_psd(rng: &mut dyn rand::RngCore, n: usize, scale: f64) -> DMatrix<f64> {
    let m = rand_matrix(rng, n, n, scale);
    &m * m.transpose()
}

fn rand_pd(rng: &mut dyn rand::RngCore, n: usize, scale: f64) -> DMatrix<f64> {
    rand_psd(rng, n, scale) + DMatrix::identity(n, n) * 0.5
}

/// Random assumption-satisfying model with `n`-dimensional states and
/// `k`-dimensional controls. Couplings are kept mild so the Riccati layers
/// stay comfortably solvable on `[0, 1]`.
pub fn random_model(rng: &mut dyn rand::RngCore, n: usize, k: usize, steps: usize) -> ModelSpec {
    let grid = TimeGrid::new(1.0, steps).expect("grid");
    let cp = |rng: &mut dyn rand::RngCore, rows: usize, cols: usize, scale: f64| {
        MatrixPath::constant(&grid, rand_matrix(rng, rows, cols, scale)).expect("path")
    };
    let invertible = |rng: &mut dyn rand::RngCore, n: usize| {
        let m = rand_matrix(rng, n, n, 0.3) + DMatrix::identity(n, n);
        MatrixPath::constant(&grid, m).expect("path")
    };

    // Cross weights small enough that Q - S'R^{-1}S stays PSD: R >= 0.5 I and
    // Q built as S'R^{-1}S plus a PSD bump.
    let r = rand_pd(rng, k, 0.4);
    let r0 = rand_pd(rng, k, 0.4);
    let s = rand_matrix(rng, k, n, 0.2);
    let s0 = rand_matrix(rng, k, n, 0.2);
    let r_inv = r.clone().try_inverse().expect("R invertible");
    let r0_inv = r0.clone().try_inverse().expect("R0 invertible");
    let q = s.transpose() * &r_inv * &s + rand_psd(rng, n, 0.6);
    let q0 = s0.transpose() * &r0_inv * &s0 + rand_psd(rng, n, 0.6);

    let obs = |rng: &mut dyn rand::RngCore| ObservationModel {
        h: cp(rng, n, n, 0.8),
        h_bar: cp(rng, n, n, 0.2),
        i_pop: cp(rng, n, n, 0.2),
        h_aff: cp(rng, n, 1, 0.2),
        f_noise: invertible(rng, n),
    };

    ModelSpec {
        grid,
        n,
        k,
        leader: LeaderDynamics {
            a: cp(rng, n, n, 0.6),
            a_bar: cp(rng, n, n, 0.3),
            c: cp(rng, n, n, 0.3),
            b_ctrl: cp(rng, n, k, 0.6),
            b_aff: cp(rng, n, 1, 0.3),
            sigma: cp(rng, n, n, 0.3),
            sigma_bar: cp(rng, n, n, 0.3),
            xi: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            obs: obs(rng),
        },
        follower: FollowerDynamics {
            a: cp(rng, n, n, 0.6),
            a_bar: cp(rng, n, n, 0.3),
            c: cp(rng, n, n, 0.3),
            f_lead: cp(rng, n, n, 0.3),
            b_ctrl: cp(rng, n, k, 0.6),
            b_aff: cp(rng, n, 1, 0.3),
            sigma: cp(rng, n, n, 0.3),
            sigma_bar: cp(rng, n, n, 0.3),
            xi: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            obs: obs(rng),
        },
        leader_cost: LeaderCost {
            q: MatrixPath::constant(&grid, q0).expect("path"),
            r: MatrixPath::constant(&grid, r0).expect("path"),
            s: MatrixPath::constant(&grid, s0).expect("path"),
            gamma_pop: cp(rng, n, n, 0.3),
            gamma_mean: cp(rng, n, n, 0.3),
            eta: cp(rng, n, 1, 0.5),
            terminal: LeaderTerminalCost {
                g: rand_psd(rng, n, 0.5),
                gamma_pop: rand_matrix(rng, n, n, 0.3),
                gamma_mean: rand_matrix(rng, n, n, 0.3),
                eta: DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5)),
            },
        },
        follower_cost: FollowerCost {
            q: MatrixPath::constant(&grid, q).expect("path"),
            r: MatrixPath::constant(&grid, r).expect("path"),
            s: MatrixPath::constant(&grid, s).expect("path"),
            gamma_pop: cp(rng, n, n, 0.3),
            gamma_mean: cp(rng, n, n, 0.3),
            gamma_lead: cp(rng, n, n, 0.3),
            gamma_lead_mean: cp(rng, n, n, 0.3),
            eta: cp(rng, n, 1, 0.5),
            terminal: FollowerTerminalCost {
                g: rand_psd(rng, n, 0.5),
                gamma_pop: rand_matrix(rng, n, n, 0.3),
                gamma_mean: rand_matrix(rng, n, n, 0.3),
                gamma_lead: rand_matrix(rng, n, n, 0.3),
                gamma_lead_mean: rand_matrix(rng, n, n, 0.3),
                eta: DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5)),
            },
        },
    }
}
