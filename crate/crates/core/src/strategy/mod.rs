//! Feedback strategy assembly for both layers of the game.
//!
//! Followers: `u_i = -(K_hat xhat_i + K_mean E[x_i] + K_lead E[x0] + K_aff)`
//! with `K_hat = R^{-1}(B'P1 + S)`, `K_mean = R^{-1}(B'(P2-P1) - S Gmean)`,
//! `K_lead = R^{-1} B' P3`, `K_aff = R^{-1} B' phi`.
//!
//! Leader: the filtered state, the follower mean and the adjoint of the
//! follower affine term are stacked into a `3n`-dimensional system; the
//! optimal control is `u0 = L_state Xcheck + L_mean E[X] + L_aff` with
//! `L_state = B_state + B_adj Sigma1`, `L_mean = B_mean + B_adj (Sigma2 - Sigma1)`,
//! `L_aff = B_adj psi`.
//!
//! The deterministic mean-field trajectories are integrated with the same
//! 4th-order scheme as the Riccati layers so that gains and means are
//! sampled consistently on one grid.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    validate_model, CoefficientInverses, DerivedCoefficients, ModelSpec, ValidationReport,
};
use crate::path::MatrixPath;
use crate::solvers::{
    integrate_matrix_ode, solve_filter_covariances, solve_p1, solve_p2_p3, solve_phi,
    solve_sigma_psi, Direction, MatrixOdeProblem, RiccatiBundle, SolvabilityCertificate,
    SolverOptions,
};

/// Block matrices of the dimension-expanded leader system.
///
/// Stacking order of the forward state is `[x0_check; E x_i; gamma]` and of
/// the backward adjoint `[y0; y; phi]`. All blocks are paths on the model
/// grid; structurally-zero entries are exactly zero by construction.
#[derive(Debug, Clone)]
pub struct AugmentedLeaderSystem {
    pub n: usize,
    pub k: usize,
    /// Diagonal leader drift block (only the (1,1) entry is populated).
    pub a0: MatrixPath,
    /// Mean-coupling drift block, includes the closed-loop follower drift.
    pub a0_bar: MatrixPath,
    /// Skew coupling between the mean blocks and the adjoint.
    pub c0: MatrixPath,
    /// Control loading of the forward system.
    pub b0: MatrixPath,
    /// Cross-weight loading of the backward system.
    pub s0: MatrixPath,
    /// Mean-control loading of the backward system.
    pub b0_bar: MatrixPath,
    /// State weight of the backward system.
    pub q0: MatrixPath,
    /// Mean weight of the backward system.
    pub q0_bar: MatrixPath,
    /// Affine drift of the forward system.
    pub d0: MatrixPath,
    /// Affine drift of the backward system.
    pub d0_bar: MatrixPath,
    /// Diffusion loading of the filtered block (Kalman gain of the leader).
    pub sigma_tilde: MatrixPath,
    /// Gain row applied to the filtered stacked state.
    pub gain_state: MatrixPath,
    /// Gain row applied to the stacked mean.
    pub gain_mean: MatrixPath,
    /// Gain row applied to the stacked adjoint.
    pub gain_adjoint: MatrixPath,
    pub g0_terminal: DMatrix<f64>,
    pub g1_terminal: DMatrix<f64>,
    pub g2_terminal: DMatrix<f64>,
    /// Initial value `[xi0; xi; 0]` of the stacked forward system.
    pub xi0: DVector<f64>,
    /// Closed-loop follower mean drift `A + Abar - B R^{-1} B' P2 - B R^{-1} S (I - Gmean)`.
    pub a2: MatrixPath,
}

/// Follower feedback gain schedule.
#[derive(Debug, Clone)]
pub struct FollowerGains {
    pub k_hat: MatrixPath,
    pub k_mean: MatrixPath,
    pub k_leader: MatrixPath,
    pub k_aff: MatrixPath,
}

impl FollowerGains {
    /// `u_i(t_k)` for the given filtered state and deterministic means.
    pub fn control(
        &self,
        k: usize,
        x_hat: &DVector<f64>,
        e_xi: &DVector<f64>,
        e_x0: &DVector<f64>,
    ) -> DVector<f64> {
        let mut u = self.k_hat.at(k) * x_hat;
        u += self.k_mean.at(k) * e_xi;
        u += self.k_leader.at(k) * e_x0;
        u += self.k_aff.at(k).column(0);
        -u
    }
}

/// Leader feedback gain schedule on the stacked system.
#[derive(Debug, Clone)]
pub struct LeaderGains {
    pub l_state: MatrixPath,
    pub l_mean: MatrixPath,
    pub l_aff: MatrixPath,
}

impl LeaderGains {
    /// `u0(t_k)` for the stacked filtered state and its mean.
    pub fn control(&self, k: usize, x_check: &DVector<f64>, e_x: &DVector<f64>) -> DVector<f64> {
        let mut u = self.l_state.at(k) * x_check;
        u += self.l_mean.at(k) * e_x;
        u += self.l_aff.at(k).column(0);
        u
    }
}

/// Deterministic mean-field trajectories of the announced equilibrium.
#[derive(Debug, Clone)]
pub struct MeanFieldTrajectories {
    /// Stacked mean `E[X] = [E x0; E x_i; gamma]`.
    pub e_x0_aug: MatrixPath,
    /// Leader mean state.
    pub e_x0: MatrixPath,
    /// Follower mean state; also the frozen population limit `z`.
    pub e_xi: MatrixPath,
    /// Mean of the leader's control.
    pub eu0: MatrixPath,
    /// Adjoint of the follower affine term inside the stacked state.
    pub gamma: MatrixPath,
    /// Follower affine term.
    pub phi: MatrixPath,
}

/// Everything the simulator and the experiments need about one solved game.
#[derive(Debug, Clone)]
pub struct StackelbergSolution {
    pub derived: DerivedCoefficients,
    pub inverses: CoefficientInverses,
    pub bundle: RiccatiBundle,
    pub certificate: SolvabilityCertificate,
    pub aug: AugmentedLeaderSystem,
    pub leader_gains: LeaderGains,
    pub follower_gains: FollowerGains,
    pub means: MeanFieldTrajectories,
}

/// Assemble the dimension-expanded block system from the solved follower layer.
///
/// `pi0` enters through the filtered block's diffusion loading.
pub fn build_augmented_system(
    spec: &ModelSpec,
    derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
    pi0: &MatrixPath,
) -> Result<AugmentedLeaderSystem> {
    let n = spec.n;
    let k = spec.k;
    let grid = &spec.grid;
    if !p2.matches_grid(grid) || !p3.matches_grid(grid) || !pi0.matches_grid(grid) {
        return Err(Error::dimension("augmented system inputs off-grid"));
    }

    let nodes = grid.len();
    let idn = DMatrix::<f64>::identity(n, n);

    let mut a0 = Vec::with_capacity(nodes);
    let mut a0_bar = Vec::with_capacity(nodes);
    let mut c0 = Vec::with_capacity(nodes);
    let mut b0 = Vec::with_capacity(nodes);
    let mut s0 = Vec::with_capacity(nodes);
    let mut b0_bar = Vec::with_capacity(nodes);
    let mut q0 = Vec::with_capacity(nodes);
    let mut q0_bar = Vec::with_capacity(nodes);
    let mut d0 = Vec::with_capacity(nodes);
    let mut d0_bar = Vec::with_capacity(nodes);
    let mut sigma_tilde = Vec::with_capacity(nodes);
    let mut gain_state = Vec::with_capacity(nodes);
    let mut gain_mean = Vec::with_capacity(nodes);
    let mut gain_adjoint = Vec::with_capacity(nodes);
    let mut a2_path = Vec::with_capacity(nodes);

    for i in 0..nodes {
        let ld = &spec.leader;
        let fd = &spec.follower;
        let lc = &spec.leader_cost;
        let fc = &spec.follower_cost;

        let b = fd.b_ctrl.at(i);
        let r_inv = inv.r_inv.at(i);
        let b_rinv_bt = b * r_inv * b.transpose();
        let s = fc.s.at(i);
        let gmean = fc.gamma_mean.at(i);
        let a2 = fd.a.at(i) + fd.a_bar.at(i)
            - &b_rinv_bt * p2.at(i)
            - b * r_inv * s * (&idn - gmean);
        // Same drift with the transposed Riccati block: the adjoint row of the
        // stacked system must be the exact dual of the forward gamma row.
        let a2_dual = fd.a.at(i) + fd.a_bar.at(i)
            - &b_rinv_bt * p2.at(i).transpose()
            - b * r_inv * s * (&idn - gmean);

        let mut m = DMatrix::zeros(3 * n, 3 * n);
        m.view_mut((0, 0), (n, n)).copy_from(ld.a.at(i));
        a0.push(m);

        let mut m = DMatrix::zeros(3 * n, 3 * n);
        m.view_mut((0, 0), (n, n)).copy_from(ld.a_bar.at(i));
        m.view_mut((0, n), (n, n)).copy_from(ld.c.at(i));
        m.view_mut((n, 0), (n, n)).copy_from(&(fd.f_lead.at(i) - &b_rinv_bt * p3.at(i)));
        m.view_mut((n, n), (n, n)).copy_from(&(&a2 + fd.c.at(i)));
        m.view_mut((2 * n, 2 * n), (n, n)).copy_from(&a2_dual);
        a0_bar.push(m);

        let mut m = DMatrix::zeros(3 * n, 3 * n);
        m.view_mut((n, 2 * n), (n, n)).copy_from(&(-&b_rinv_bt));
        m.view_mut((2 * n, n), (n, n)).copy_from(&b_rinv_bt);
        c0.push(m);

        let mut m = DMatrix::zeros(3 * n, k);
        m.view_mut((0, 0), (n, k)).copy_from(ld.b_ctrl.at(i));
        b0.push(m);

        let mut m = DMatrix::zeros(3 * n, k);
        m.view_mut((0, 0), (n, k)).copy_from(&lc.s.at(i).transpose());
        s0.push(m);

        let s0t = lc.s.at(i).transpose();
        let mut m = DMatrix::zeros(3 * n, k);
        m.view_mut((0, 0), (n, k))
            .copy_from(&(-lc.gamma_mean.at(i).transpose() * &s0t));
        m.view_mut((n, 0), (n, k))
            .copy_from(&(-lc.gamma_pop.at(i).transpose() * &s0t));
        m.view_mut((2 * n, 0), (n, k)).copy_from(&(p3.at(i) * ld.b_ctrl.at(i)));
        b0_bar.push(m);

        let mut m = DMatrix::zeros(3 * n, 3 * n);
        m.view_mut((0, 0), (n, n)).copy_from(lc.q.at(i));
        q0.push(m);

        let q0m = lc.q.at(i);
        let gp = lc.gamma_pop.at(i);
        let gm = lc.gamma_mean.at(i);
        let mut m = DMatrix::zeros(3 * n, 3 * n);
        m.view_mut((0, 0), (n, n)).copy_from(derived.gamma_tilde0.at(i));
        m.view_mut((0, n), (n, n)).copy_from(&((gm.transpose() - &idn) * q0m * gp));
        m.view_mut((n, 0), (n, n)).copy_from(&(gp.transpose() * q0m * (gm - &idn)));
        m.view_mut((n, n), (n, n)).copy_from(&(gp.transpose() * q0m * gp));
        q0_bar.push(m);

        let mut m = DMatrix::zeros(3 * n, 1);
        m.view_mut((0, 0), (n, 1)).copy_from(ld.b_aff.at(i));
        m.view_mut((n, 0), (n, 1)).copy_from(fd.b_aff.at(i));
        d0.push(m);

        let eta0 = lc.eta.at(i);
        let qeta = fc.q.at(i) * fc.eta.at(i);
        let mut m = DMatrix::zeros(3 * n, 1);
        m.view_mut((0, 0), (n, 1)).copy_from(&((gm.transpose() - &idn) * q0m * eta0));
        m.view_mut((n, 0), (n, 1)).copy_from(&(gp.transpose() * q0m * eta0));
        m.view_mut((2 * n, 0), (n, 1)).copy_from(
            &(p2.at(i) * fd.b_aff.at(i)
                + p3.at(i) * ld.b_aff.at(i)
                + (fc.gamma_mean.at(i).transpose() - &idn) * qeta),
        );
        d0_bar.push(m);

        let f0_inv_t = inv.f0_inv.at(i).transpose();
        let mut m = DMatrix::zeros(3 * n, n);
        m.view_mut((0, 0), (n, n))
            .copy_from(&(ld.sigma_bar.at(i) + pi0.at(i) * ld.obs.h.at(i).transpose() * f0_inv_t));
        sigma_tilde.push(m);

        let r0_inv = inv.r0_inv.at(i);
        let mut m = DMatrix::zeros(k, 3 * n);
        m.view_mut((0, 0), (k, n)).copy_from(&(-(r0_inv * lc.s.at(i))));
        gain_state.push(m);

        let mut m = DMatrix::zeros(k, 3 * n);
        m.view_mut((0, 0), (k, n)).copy_from(&(r0_inv * lc.s.at(i) * gm));
        m.view_mut((0, n), (k, n)).copy_from(&(r0_inv * lc.s.at(i) * gp));
        m.view_mut((0, 2 * n), (k, n))
            .copy_from(&(r0_inv * ld.b_ctrl.at(i).transpose() * p3.at(i).transpose()));
        gain_mean.push(m);

        let mut m = DMatrix::zeros(k, 3 * n);
        m.view_mut((0, 0), (k, n)).copy_from(&(-(r0_inv * ld.b_ctrl.at(i).transpose())));
        gain_adjoint.push(m);

        a2_path.push(a2);
    }

    let lt = &spec.leader_cost.terminal;
    let ft = &spec.follower_cost.terminal;
    let mut g0_terminal = DMatrix::zeros(3 * n, 3 * n);
    g0_terminal.view_mut((0, 0), (n, n)).copy_from(&lt.g);

    let mut g1_terminal = DMatrix::zeros(3 * n, 3 * n);
    g1_terminal.view_mut((0, 0), (n, n)).copy_from(&derived.gamma_tilde1);
    g1_terminal
        .view_mut((0, n), (n, n))
        .copy_from(&((lt.gamma_mean.transpose() - &idn) * &lt.g * &lt.gamma_pop));
    g1_terminal
        .view_mut((n, 0), (n, n))
        .copy_from(&(lt.gamma_pop.transpose() * &lt.g * (&lt.gamma_mean - &idn)));
    g1_terminal
        .view_mut((n, n), (n, n))
        .copy_from(&(lt.gamma_pop.transpose() * &lt.g * &lt.gamma_pop));

    let mut g2_terminal = DMatrix::zeros(3 * n, 1);
    g2_terminal
        .view_mut((0, 0), (n, 1))
        .copy_from(&((lt.gamma_mean.transpose() - &idn) * &lt.g * &lt.eta));
    g2_terminal
        .view_mut((n, 0), (n, 1))
        .copy_from(&(lt.gamma_pop.transpose() * &lt.g * &lt.eta));
    g2_terminal
        .view_mut((2 * n, 0), (n, 1))
        .copy_from(&((ft.gamma_mean.transpose() - &idn) * &ft.g * &ft.eta));

    let mut xi0 = DVector::zeros(3 * n);
    xi0.rows_mut(0, n).copy_from(&spec.leader.xi);
    xi0.rows_mut(n, n).copy_from(&spec.follower.xi);

    Ok(AugmentedLeaderSystem {
        n,
        k,
        a0: MatrixPath::new(a0)?,
        a0_bar: MatrixPath::new(a0_bar)?,
        c0: MatrixPath::new(c0)?,
        b0: MatrixPath::new(b0)?,
        s0: MatrixPath::new(s0)?,
        b0_bar: MatrixPath::new(b0_bar)?,
        q0: MatrixPath::new(q0)?,
        q0_bar: MatrixPath::new(q0_bar)?,
        d0: MatrixPath::new(d0)?,
        d0_bar: MatrixPath::new(d0_bar)?,
        sigma_tilde: MatrixPath::new(sigma_tilde)?,
        gain_state: MatrixPath::new(gain_state)?,
        gain_mean: MatrixPath::new(gain_mean)?,
        gain_adjoint: MatrixPath::new(gain_adjoint)?,
        g0_terminal,
        g1_terminal,
        g2_terminal,
        xi0,
        a2: MatrixPath::new(a2_path)?,
    })
}

impl AugmentedLeaderSystem {
    /// Verify that every structurally-zero block entry is exactly zero.
    pub fn sparsity_ok(&self) -> bool {
        let n = self.n;
        let zero_block = |p: &MatrixPath, r: usize, c: usize| -> bool {
            p.values()
                .iter()
                .all(|m| m.view((r * n, c * n), (n, n)).iter().all(|&v| v == 0.0))
        };
        // a0: only (0,0) populated.
        for (r, c) in [(0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)] {
            if !zero_block(&self.a0, r, c) {
                return false;
            }
        }
        // a0_bar: (0,2), (1,2), (2,0), (2,1) are zero.
        for (r, c) in [(0, 2), (1, 2), (2, 0), (2, 1)] {
            if !zero_block(&self.a0_bar, r, c) {
                return false;
            }
        }
        // c0: only (1,2) and (2,1) populated.
        for (r, c) in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0), (2, 2)] {
            if !zero_block(&self.c0, r, c) {
                return false;
            }
        }
        // q0: only (0,0); q0_bar: third row/column zero.
        for (r, c) in [(0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)] {
            if !zero_block(&self.q0, r, c) {
                return false;
            }
        }
        for (r, c) in [(0, 2), (1, 2), (2, 0), (2, 1), (2, 2)] {
            if !zero_block(&self.q0_bar, r, c) {
                return false;
            }
        }
        // Column vectors: b0 rows 2-3 zero, s0 rows 2-3 zero, sigma_tilde rows 2-3 zero.
        let zero_rows = |p: &MatrixPath, from: usize| -> bool {
            p.values()
                .iter()
                .all(|m| m.view((from, 0), (m.nrows() - from, m.ncols())).iter().all(|&v| v == 0.0))
        };
        if !zero_rows(&self.b0, n) || !zero_rows(&self.s0, n) || !zero_rows(&self.sigma_tilde, n) {
            return false;
        }
        // Gain rows: state and adjoint touch only the first block column.
        let zero_cols = |p: &MatrixPath, from: usize| -> bool {
            p.values()
                .iter()
                .all(|m| m.view((0, from), (m.nrows(), m.ncols() - from)).iter().all(|&v| v == 0.0))
        };
        zero_cols(&self.gain_state, n) && zero_cols(&self.gain_adjoint, n)
    }
}

/// Leader gain assembly plus forward integration of the stacked mean.
pub fn compute_leader_layer(
    spec: &ModelSpec,
    aug: &AugmentedLeaderSystem,
    sigma1: &MatrixPath,
    sigma2: &MatrixPath,
    psi: &MatrixPath,
) -> Result<(LeaderGains, MatrixPath, MatrixPath)> {
    let grid = &spec.grid;
    let nodes = grid.len();

    let mut l_state = Vec::with_capacity(nodes);
    let mut l_mean = Vec::with_capacity(nodes);
    let mut l_aff = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let b1 = aug.gain_adjoint.at(i);
        l_state.push(aug.gain_state.at(i) + b1 * sigma1.at(i));
        l_mean.push(aug.gain_mean.at(i) + b1 * (sigma2.at(i) - sigma1.at(i)));
        l_aff.push(b1 * psi.at(i));
    }
    let gains = LeaderGains {
        l_state: MatrixPath::new(l_state)?,
        l_mean: MatrixPath::new(l_mean)?,
        l_aff: MatrixPath::new(l_aff)?,
    };

    let rhs = |t: f64, x: &DMatrix<f64>| {
        let drift = aug.a0.eval(grid, t)
            + aug.a0_bar.eval(grid, t)
            + aug.c0.eval(grid, t) * sigma2.eval(grid, t)
            + aug.b0.eval(grid, t)
                * (aug.gain_state.eval(grid, t)
                    + aug.gain_mean.eval(grid, t)
                    + aug.gain_adjoint.eval(grid, t) * sigma2.eval(grid, t));
        let aff = (aug.c0.eval(grid, t)
            + aug.b0.eval(grid, t) * aug.gain_adjoint.eval(grid, t))
            * psi.eval(grid, t)
            + aug.d0.eval(grid, t);
        drift * x + aff
    };
    let init = DMatrix::from_column_slice(3 * spec.n, 1, aug.xi0.as_slice());
    let e_x = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Forward, init, "E[X] (leader layer)", rhs),
        grid,
    )?;

    let mut eu0 = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let u = (gains.l_state.at(i) + gains.l_mean.at(i)) * e_x.at(i) + gains.l_aff.at(i);
        eu0.push(u);
    }
    Ok((gains, e_x, MatrixPath::new(eu0)?))
}

/// Follower gain assembly plus the coupled deterministic mean pair.
///
/// Solves the affine term with the supplied leader mean control, then the
/// joint `(E x0, E x_i)` linear ODE, and returns the gain schedule; the pair
/// is integrated in `2n` dimensions independently of the stacked system so
/// the two representations can be cross-checked.
pub fn compute_follower_layer(
    spec: &ModelSpec,
    derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
    p1: &MatrixPath,
    p2: &MatrixPath,
    p3: &MatrixPath,
    eu0: &MatrixPath,
) -> Result<(FollowerGains, MatrixPath, MatrixPath, MatrixPath)> {
    let grid = &spec.grid;
    
    let nodes = grid.len();
    let phi = solve_phi(spec, derived, inv, p2, p3, eu0)?;

    let mut k_hat = Vec::with_capacity(nodes);
    let mut k_mean = Vec::with_capacity(nodes);
    let mut k_leader = Vec::with_capacity(nodes);
    let mut k_aff = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let b_t = spec.follower.b_ctrl.at(i).transpose();
        let r_inv = inv.r_inv.at(i);
        let s = spec.follower_cost.s.at(i);
        k_hat.push(r_inv * (&b_t * p1.at(i) + s));
        k_mean.push(r_inv * (&b_t * (p2.at(i) - p1.at(i)) - s * spec.follower_cost.gamma_mean.at(i)));
        k_leader.push(r_inv * (&b_t * p3.at(i)));
        k_aff.push(r_inv * (&b_t * phi.at(i)));
    }
    let gains = FollowerGains {
        k_hat: MatrixPath::new(k_hat)?,
        k_mean: MatrixPath::new(k_mean)?,
        k_leader: MatrixPath::new(k_leader)?,
        k_aff: MatrixPath::new(k_aff)?,
    };

    let (e_x0, e_xi) = solve_mean_pair(spec, inv, p2, p3, &phi, eu0)?;
    Ok((gains, phi, e_x0, e_xi))
}

/// Coupled deterministic means `(E x0, E x_i)` as one `2n` forward linear ODE.
pub fn solve_mean_pair(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
    phi: &MatrixPath,
    eu0: &MatrixPath,
) -> Result<(MatrixPath, MatrixPath)> {
    let grid = &spec.grid;
    let n = spec.n;
    let idn = DMatrix::<f64>::identity(n, n);
    let rhs = |t: f64, x: &DMatrix<f64>| {
        let e_x0 = x.view((0, 0), (n, 1)).into_owned();
        let e_xi = x.view((n, 0), (n, 1)).into_owned();
        let ld = &spec.leader;
        let fd = &spec.follower;
        let b = fd.b_ctrl.eval(grid, t);
        let r_inv = inv.r_inv.eval(grid, t);
        let b_rinv_bt = &b * &r_inv * b.transpose();
        let s = spec.follower_cost.s.eval(grid, t);
        let gmean = spec.follower_cost.gamma_mean.eval(grid, t);

        let top = (ld.a.eval(grid, t) + ld.a_bar.eval(grid, t)) * &e_x0
            + ld.b_ctrl.eval(grid, t) * eu0.eval(grid, t)
            + ld.c.eval(grid, t) * &e_xi
            + ld.b_aff.eval(grid, t);
        let bottom = (fd.a.eval(grid, t) + fd.a_bar.eval(grid, t) + fd.c.eval(grid, t)
            - &b_rinv_bt * p2.eval(grid, t)
            - &b * &r_inv * &s * (&idn - &gmean))
            * &e_xi
            + (fd.f_lead.eval(grid, t) - &b_rinv_bt * p3.eval(grid, t)) * &e_x0
            - &b_rinv_bt * phi.eval(grid, t)
            + fd.b_aff.eval(grid, t);

        let mut out = DMatrix::zeros(2 * n, 1);
        out.view_mut((0, 0), (n, 1)).copy_from(&top);
        out.view_mut((n, 0), (n, 1)).copy_from(&bottom);
        out
    };
    let mut init = DMatrix::zeros(2 * n, 1);
    init.view_mut((0, 0), (n, 1)).copy_from(&DMatrix::from_column_slice(n, 1, spec.leader.xi.as_slice()));
    init.view_mut((n, 0), (n, 1)).copy_from(&DMatrix::from_column_slice(n, 1, spec.follower.xi.as_slice()));
    let joint = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Forward, init, "(E x0, E x_i)", rhs),
        grid,
    )?;

    let nodes = grid.len();
    let mut e_x0 = Vec::with_capacity(nodes);
    let mut e_xi = Vec::with_capacity(nodes);
    for m in joint.values() {
        e_x0.push(m.view((0, 0), (n, 1)).into_owned());
        e_xi.push(m.view((n, 0), (n, 1)).into_owned());
    }
    Ok((MatrixPath::new(e_x0)?, MatrixPath::new(e_xi)?))
}

/// Forward integration of the adjoint block `gamma` of the stacked state,
/// given the (possibly perturbed) deterministic means.
///
/// `gamma' = A2_dual' gamma + B R^{-1} B' y` with `y` reconstructed as the
/// middle block of `Sigma2 [e_x0; e_xi; gamma] + psi`.
pub fn solve_gamma(
    spec: &ModelSpec,
    aug: &AugmentedLeaderSystem,
    sigma2: &MatrixPath,
    psi: &MatrixPath,
    e_x0: &MatrixPath,
    e_xi: &MatrixPath,
) -> Result<MatrixPath> {
    let grid = &spec.grid;
    let n = spec.n;
    let rhs = move |t: f64, gamma: &DMatrix<f64>| {
        let mut stacked = DMatrix::zeros(3 * n, 1);
        stacked.view_mut((0, 0), (n, 1)).copy_from(&e_x0.eval(grid, t));
        stacked.view_mut((n, 0), (n, 1)).copy_from(&e_xi.eval(grid, t));
        stacked.view_mut((2 * n, 0), (n, 1)).copy_from(gamma);
        let adjoint = sigma2.eval(grid, t) * stacked + psi.eval(grid, t);
        let y = adjoint.view((n, 0), (n, 1)).into_owned();
        let dual = aug.a0_bar.eval(grid, t).view((2 * n, 2 * n), (n, n)).into_owned();
        let c_gain = aug.c0.eval(grid, t).view((2 * n, n), (n, n)).into_owned();
        dual * gamma + c_gain * y
    };
    integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Forward, DMatrix::zeros(n, 1), "gamma", rhs),
        grid,
    )
}

/// Solve the whole deterministic layer of the game in dependency order.
pub fn solve_stackelberg(spec: &ModelSpec, opts: &SolverOptions) -> Result<StackelbergSolution> {
    let report: ValidationReport = validate_model(spec)?;
    if !report.is_valid() {
        return Err(Error::Validation {
            violations: report.violations.into_iter().map(|v| v.message).collect(),
        });
    }
    let derived = crate::model::derive_coefficients(spec)?;
    let inverses = CoefficientInverses::compute(spec)?;

    let p1 = solve_p1(spec, &derived, &inverses)?;
    let (p2, p3, certificate) = solve_p2_p3(spec, &derived, &inverses, opts)?;
    let (pi, pi0) = solve_filter_covariances(spec, &inverses)?;
    let aug = build_augmented_system(spec, &derived, &inverses, &p2, &p3, &pi0)?;
    let (sigma1, sigma2, psi) = solve_sigma_psi(spec, &aug)?;
    let (leader_gains, e_x0_aug, eu0) = compute_leader_layer(spec, &aug, &sigma1, &sigma2, &psi)?;
    let (follower_gains, phi, e_x0, e_xi) =
        compute_follower_layer(spec, &derived, &inverses, &p1, &p2, &p3, &eu0)?;

    let n = spec.n;
    let gamma = MatrixPath::new(
        e_x0_aug.values().iter().map(|m| m.view((2 * n, 0), (n, 1)).into_owned()).collect(),
    )?;

    let means = MeanFieldTrajectories {
        e_x0_aug,
        e_x0,
        e_xi,
        eu0,
        gamma,
        phi: phi.clone(),
    };
    let bundle = RiccatiBundle {
        p1,
        p2,
        p3,
        phi,
        pi,
        pi0,
        sigma1,
        sigma2,
        psi,
    };
    Ok(StackelbergSolution {
        derived,
        inverses,
        bundle,
        certificate,
        aug,
        leader_gains,
        follower_gains,
        means,
    })
}

/// Sup-norm deviation of a simulated filtered adjoint from its feedback
/// representation `P1 (xhat - E x_i) + P2 E x_i + P3 E x0 + phi`.
///
/// Diagnostic for the decoupling relation; not used in strategy synthesis.
pub fn decoupling_residual(
    spec: &ModelSpec,
    bundle: &RiccatiBundle,
    means: &MeanFieldTrajectories,
    x_hat: &[DVector<f64>],
    p_hat: &[DVector<f64>],
) -> Result<f64> {
    let nodes = spec.grid.len();
    if x_hat.len() != nodes || p_hat.len() != nodes {
        return Err(Error::invalid("decoupling residual: paths off-grid"));
    }
    let mut worst = 0.0f64;
    for k in 0..nodes {
        let e_xi = means.e_xi.at(k).column(0).into_owned();
        let recon = bundle.p1.at(k) * (&x_hat[k] - &e_xi)
            + bundle.p2.at(k) * &e_xi
            + bundle.p3.at(k) * means.e_x0.at(k).column(0).into_owned()
            + bundle.phi.at(k).column(0).into_owned();
        worst = worst.max((&p_hat[k] - recon).amax());
    }
    Ok(worst)
}
