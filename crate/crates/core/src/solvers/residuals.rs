//! Centered-difference residual evaluators for every solved equation.
//!
//! Each residual rebuilds the analytic right-hand side directly from the
//! model coefficients — a second, independent transcription of the equations
//! the solvers integrate — and measures
//! `max_k || (X(t_{k+1}) - X(t_{k-1})) / (2 dt) - F(t_k, X(t_k)) ||_inf`
//! over interior nodes. Second order in `dt` on a correct solution; a
//! transcription mismatch on either side shows up as an O(1) floor.

use nalgebra::DMatrix;

use crate::grid::TimeGrid;
use crate::model::{CoefficientInverses, DerivedCoefficients, ModelSpec};
use crate::path::MatrixPath;
use crate::strategy::AugmentedLeaderSystem;

fn centered(path: &MatrixPath, grid: &TimeGrid, rhs: impl Fn(usize) -> DMatrix<f64>) -> f64 {
    let dt = grid.dt();
    let mut worst = 0.0f64;
    for k in 1..grid.steps() {
        let deriv = (path.at(k + 1) - path.at(k - 1)) / (2.0 * dt);
        worst = worst.max((deriv - rhs(k)).amax());
    }
    worst
}

/// `P1' = (P1 B + S') R^{-1} (B' P1 + S) - P1 A - A' P1 - Q`.
pub fn p1_residual(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
    p1: &MatrixPath,
) -> f64 {
    centered(p1, &spec.grid, |k| {
        let a = spec.follower.a.at(k);
        let b = spec.follower.b_ctrl.at(k);
        let s = spec.follower_cost.s.at(k);
        let q = spec.follower_cost.q.at(k);
        let p = p1.at(k);
        (p * b + s.transpose()) * inv.r_inv.at(k) * (b.transpose() * p + s) - p * a
            - a.transpose() * p
            - q
    })
}

/// Residual of the coupled `[P2, P3]` pair, written against each block's own
/// equation rather than the stacked rewrite.
pub fn p2_p3_residual(
    spec: &ModelSpec,
    derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
) -> f64 {
    let n = spec.n;
    let idn = DMatrix::<f64>::identity(n, n);
    let fd = &spec.follower;
    let fc = &spec.follower_cost;
    let ld = &spec.leader;

    let r2 = centered(p2, &spec.grid, |k| {
        let a_sr = fd.a.at(k) + fd.a_bar.at(k)
            - fd.b_ctrl.at(k) * inv.r_inv.at(k) * fc.s.at(k) * (&idn - fc.gamma_mean.at(k));
        let b_rb = fd.b_ctrl.at(k) * inv.r_inv.at(k) * fd.b_ctrl.at(k).transpose();
        let q = fc.q.at(k);
        let gm = fc.gamma_mean.at(k);
        let s = fc.s.at(k);
        let weight = q
            + derived.gamma_tilde2.at(k)
            + (gm.transpose() - &idn) * q * fc.gamma_pop.at(k)
            - (&idn - gm.transpose()) * s.transpose() * inv.r_inv.at(k) * s * (&idn - gm);
        let p = p2.at(k);
        p * &b_rb * p
            - p * (&a_sr + fd.c.at(k))
            - a_sr.transpose() * p
            - p3.at(k) * ld.c.at(k)
            - weight
    });
    let r3 = centered(p3, &spec.grid, |k| {
        let a_sr = fd.a.at(k) + fd.a_bar.at(k)
            - fd.b_ctrl.at(k) * inv.r_inv.at(k) * fc.s.at(k) * (&idn - fc.gamma_mean.at(k));
        let b_rb = fd.b_ctrl.at(k) * inv.r_inv.at(k) * fd.b_ctrl.at(k).transpose();
        let p = p3.at(k);
        p2.at(k) * &b_rb * p
            - p * (ld.a.at(k) + ld.a_bar.at(k))
            - a_sr.transpose() * p
            - p2.at(k) * fd.f_lead.at(k)
            - derived.gamma_tilde3.at(k)
            + fc.q.at(k) * fc.gamma_lead.at(k)
    });
    r2.max(r3)
}

/// `phi' = -(M phi + P3 B0 Eu0 + P2 b + P3 b0 + (Gmean' - I) Q eta)`.
pub fn phi_residual(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
    eu0: &MatrixPath,
    phi: &MatrixPath,
) -> f64 {
    let n = spec.n;
    let idn = DMatrix::<f64>::identity(n, n);
    centered(phi, &spec.grid, |k| {
        let fd = &spec.follower;
        let fc = &spec.follower_cost;
        let b = fd.b_ctrl.at(k);
        let m = fd.a.at(k).transpose() + fd.a_bar.at(k).transpose()
            - p2.at(k) * b * inv.r_inv.at(k) * b.transpose()
            - (&idn - fc.gamma_mean.at(k).transpose())
                * fc.s.at(k).transpose()
                * inv.r_inv.at(k)
                * b.transpose();
        -(m * phi.at(k)
            + p3.at(k) * spec.leader.b_ctrl.at(k) * eu0.at(k)
            + p2.at(k) * fd.b_aff.at(k)
            + p3.at(k) * spec.leader.b_aff.at(k)
            + (fc.gamma_mean.at(k).transpose() - &idn) * fc.q.at(k) * fc.eta.at(k))
    })
}

/// Follower/leader filter covariance equations.
pub fn pi_residual(spec: &ModelSpec, inv: &CoefficientInverses, pi: &MatrixPath) -> f64 {
    centered(pi, &spec.grid, |k| {
        let fd = &spec.follower;
        let gain = fd.sigma_bar.at(k)
            + pi.at(k) * fd.obs.h.at(k).transpose() * inv.f_inv.at(k).transpose();
        fd.a.at(k) * pi.at(k) + pi.at(k) * fd.a.at(k).transpose() - &gain * gain.transpose()
            + fd.sigma.at(k) * fd.sigma.at(k).transpose()
            + fd.sigma_bar.at(k) * fd.sigma_bar.at(k).transpose()
    })
}

pub fn pi0_residual(spec: &ModelSpec, inv: &CoefficientInverses, pi0: &MatrixPath) -> f64 {
    centered(pi0, &spec.grid, |k| {
        let ld = &spec.leader;
        let gain = ld.sigma_bar.at(k)
            + pi0.at(k) * ld.obs.h.at(k).transpose() * inv.f0_inv.at(k).transpose();
        ld.a.at(k) * pi0.at(k) + pi0.at(k) * ld.a.at(k).transpose() - &gain * gain.transpose()
            + ld.sigma.at(k) * ld.sigma.at(k).transpose()
            + ld.sigma_bar.at(k) * ld.sigma_bar.at(k).transpose()
    })
}

/// The two stacked Riccati layers and the stacked affine term.
pub fn sigma1_residual(spec: &ModelSpec, aug: &AugmentedLeaderSystem, sigma1: &MatrixPath) -> f64 {
    centered(sigma1, &spec.grid, |k| {
        let s1 = sigma1.at(k);
        -(s1 * (aug.a0.at(k) + aug.b0.at(k) * aug.gain_state.at(k))
            + (aug.a0.at(k).transpose() + aug.s0.at(k) * aug.gain_adjoint.at(k)) * s1
            + s1 * aug.b0.at(k) * aug.gain_adjoint.at(k) * s1
            + aug.q0.at(k)
            + aug.s0.at(k) * aug.gain_state.at(k))
    })
}

pub fn sigma2_residual(spec: &ModelSpec, aug: &AugmentedLeaderSystem, sigma2: &MatrixPath) -> f64 {
    centered(sigma2, &spec.grid, |k| {
        let s2 = sigma2.at(k);
        let a_sum = aug.a0.at(k) + aug.a0_bar.at(k);
        let coupling = aug.b0_bar.at(k) + aug.s0.at(k);
        let gain_sum = aug.gain_state.at(k) + aug.gain_mean.at(k);
        -(s2 * (&a_sum + aug.b0.at(k) * &gain_sum)
            + (a_sum.transpose() + &coupling * aug.gain_adjoint.at(k)) * s2
            + s2 * (aug.c0.at(k) + aug.b0.at(k) * aug.gain_adjoint.at(k)) * s2
            + aug.q0.at(k)
            + aug.q0_bar.at(k)
            + &coupling * gain_sum)
    })
}

pub fn psi_residual(
    spec: &ModelSpec,
    aug: &AugmentedLeaderSystem,
    sigma2: &MatrixPath,
    psi: &MatrixPath,
) -> f64 {
    centered(psi, &spec.grid, |k| {
        let s2 = sigma2.at(k);
        let coupling = aug.b0_bar.at(k) + aug.s0.at(k);
        -(((aug.a0.at(k) + aug.a0_bar.at(k)).transpose()
            + s2 * aug.c0.at(k)
            + s2 * aug.b0.at(k) * aug.gain_adjoint.at(k)
            + &coupling * aug.gain_adjoint.at(k))
            * psi.at(k)
            + s2 * aug.d0.at(k)
            + aug.d0_bar.at(k))
    })
}

/// Closed-loop stacked mean equation.
pub fn stacked_mean_residual(
    spec: &ModelSpec,
    aug: &AugmentedLeaderSystem,
    sigma2: &MatrixPath,
    psi: &MatrixPath,
    e_x0_aug: &MatrixPath,
) -> f64 {
    centered(e_x0_aug, &spec.grid, |k| {
        let drift = aug.a0.at(k)
            + aug.a0_bar.at(k)
            + aug.c0.at(k) * sigma2.at(k)
            + aug.b0.at(k)
                * (aug.gain_state.at(k)
                    + aug.gain_mean.at(k)
                    + aug.gain_adjoint.at(k) * sigma2.at(k));
        drift * e_x0_aug.at(k)
            + (aug.c0.at(k) + aug.b0.at(k) * aug.gain_adjoint.at(k)) * psi.at(k)
            + aug.d0.at(k)
    })
}

/// Coupled deterministic mean pair, each block against its own equation.
pub fn mean_pair_residual(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
    phi: &MatrixPath,
    eu0: &MatrixPath,
    e_x0: &MatrixPath,
    e_xi: &MatrixPath,
) -> f64 {
    let n = spec.n;
    let idn = DMatrix::<f64>::identity(n, n);
    let r_top = centered(e_x0, &spec.grid, |k| {
        let ld = &spec.leader;
        (ld.a.at(k) + ld.a_bar.at(k)) * e_x0.at(k)
            + ld.b_ctrl.at(k) * eu0.at(k)
            + ld.c.at(k) * e_xi.at(k)
            + ld.b_aff.at(k)
    });
    let r_bot = centered(e_xi, &spec.grid, |k| {
        let fd = &spec.follower;
        let fc = &spec.follower_cost;
        let b = fd.b_ctrl.at(k);
        let b_rb = b * inv.r_inv.at(k) * b.transpose();
        (fd.a.at(k) + fd.a_bar.at(k) + fd.c.at(k)
            - &b_rb * p2.at(k)
            - b * inv.r_inv.at(k) * fc.s.at(k) * (&idn - fc.gamma_mean.at(k)))
            * e_xi.at(k)
            + (fd.f_lead.at(k) - &b_rb * p3.at(k)) * e_x0.at(k)
            - &b_rb * phi.at(k)
            + fd.b_aff.at(k)
    });
    r_top.max(r_bot)
}
