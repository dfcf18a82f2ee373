//! Backward/forward integration of the Riccati and auxiliary layers.
//!
//! The feedback synthesis needs, in order:
//!
//! 1. `P1` — the standalone follower Riccati equation,
//! 2. `[P2, P3]` — a coupled non-symmetric Riccati pair, solved as one
//!    `n x 2n` block unknown together with a fundamental-matrix solvability
//!    certificate,
//! 3. the filter error covariances `Pi` (follower) and `Pi0` (leader),
//! 4. `Sigma1`, `Sigma2`, `psi` — the `3n`-dimensional leader layer on the
//!    dimension-expanded system,
//! 5. `phi` — the follower affine term, driven by the leader's mean control.
//!
//! Backward equations are integrated in reversed time so everything is a
//! forward IVP internally; symmetric solutions (`P1`, `Pi`, `Pi0`) are
//! re-symmetrized after every step, the genuinely non-symmetric blocks are
//! not.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use crate::model::{CoefficientInverses, DerivedCoefficients, ModelSpec};
use crate::path::MatrixPath;
use crate::strategy::AugmentedLeaderSystem;

pub mod ode;
pub mod residuals;

pub use ode::{integrate_matrix_ode, residual_inf_norm, Direction, MatrixOdeProblem};

/// Solver knobs with the defaults used throughout.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative floor on the smallest singular value of the certificate matrix.
    pub cert_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { cert_threshold: 1e-8 }
    }
}

/// All solved deterministic layers on the model grid.
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub p1: MatrixPath,
    pub p2: MatrixPath,
    pub p3: MatrixPath,
    pub phi: MatrixPath,
    pub pi: MatrixPath,
    pub pi0: MatrixPath,
    pub sigma1: MatrixPath,
    pub sigma2: MatrixPath,
    pub psi: MatrixPath,
}

/// Fundamental-matrix non-singularity test for the coupled `[P2, P3]` pair.
///
/// `theta` solves `theta' = H theta`, `theta(T) = I` for the `3n x 3n` block
/// matrix `H = [[H1, -I1], [-Q1, -H2]]`; the test matrix is the upper `2n x 2n`
/// block of `theta(t) [I; G1]` and must stay non-singular on the whole grid.
#[derive(Debug, Clone)]
pub struct SolvabilityCertificate {
    pub theta: MatrixPath,
    /// Smallest singular value of the test matrix at every grid node.
    pub min_singular_value: Vec<f64>,
    pub pass: bool,
    pub threshold: f64,
}

/// Time-dependent blocks of the coupled `[P2, P3]` Riccati pair.
struct BlockCoefficients<'a> {
    spec: &'a ModelSpec,
    derived: &'a DerivedCoefficients,
    inv: &'a CoefficientInverses,
}

impl BlockCoefficients<'_> {
    /// `A + Abar - B R^{-1} S (I - Gmean)`, the recurring closed-loop drift piece.
    fn a_sr(&self, t: f64) -> DMatrix<f64> {
        let g = &self.spec.grid;
        let n = self.spec.n;
        let i = DMatrix::identity(n, n);
        self.spec.follower.a.eval(g, t) + self.spec.follower.a_bar.eval(g, t)
            - self.spec.follower.b_ctrl.eval(g, t)
                * self.inv.r_inv.eval(g, t)
                * self.spec.follower_cost.s.eval(g, t)
                * (i - self.spec.follower_cost.gamma_mean.eval(g, t))
    }

    fn b_rinv_bt(&self, t: f64) -> DMatrix<f64> {
        let g = &self.spec.grid;
        let b = self.spec.follower.b_ctrl.eval(g, t);
        &b * self.inv.r_inv.eval(g, t) * b.transpose()
    }

    fn h1(&self, t: f64) -> DMatrix<f64> {
        let g = &self.spec.grid;
        let n = self.spec.n;
        let mut h1 = DMatrix::zeros(2 * n, 2 * n);
        // The population coupling C rides along in the left coefficient of
        // the first block row (it multiplies E x_i in the mean dynamics).
        h1.view_mut((0, 0), (n, n))
            .copy_from(&(self.a_sr(t) + self.spec.follower.c.eval(g, t)));
        h1.view_mut((0, n), (n, n)).copy_from(&self.spec.follower.f_lead.eval(g, t));
        h1.view_mut((n, 0), (n, n)).copy_from(&self.spec.leader.c.eval(g, t));
        h1.view_mut((n, n), (n, n))
            .copy_from(&(self.spec.leader.a.eval(g, t) + self.spec.leader.a_bar.eval(g, t)));
        h1
    }

    fn h2(&self, t: f64) -> DMatrix<f64> {
        self.a_sr(t).transpose()
    }

    fn q1(&self, t: f64) -> DMatrix<f64> {
        let g = &self.spec.grid;
        let n = self.spec.n;
        let fc = &self.spec.follower_cost;
        let i = DMatrix::identity(n, n);
        let q = fc.q.eval(g, t);
        let gm = fc.gamma_mean.eval(g, t);
        let s = fc.s.eval(g, t);
        let left = &q
            + self.derived.gamma_tilde2.eval(g, t)
            + (gm.transpose() - &i) * &q * fc.gamma_pop.eval(g, t)
            - (&i - gm.transpose()) * s.transpose() * self.inv.r_inv.eval(g, t) * &s * (&i - &gm);
        let right = self.derived.gamma_tilde3.eval(g, t) - &q * fc.gamma_lead.eval(g, t);
        let mut q1 = DMatrix::zeros(n, 2 * n);
        q1.view_mut((0, 0), (n, n)).copy_from(&left);
        q1.view_mut((0, n), (n, n)).copy_from(&right);
        q1
    }

    fn i1(&self, t: f64) -> DMatrix<f64> {
        let n = self.spec.n;
        let mut i1 = DMatrix::zeros(2 * n, n);
        i1.view_mut((0, 0), (n, n)).copy_from(&self.b_rinv_bt(t));
        i1
    }

    fn g1(&self) -> DMatrix<f64> {
        let n = self.spec.n;
        let fc = &self.spec.follower_cost;
        let i = DMatrix::identity(n, n);
        let g = &fc.terminal.g;
        let p2_t = g
            + &self.derived.gamma_tilde4
            + (fc.terminal.gamma_mean.transpose() - &i) * g * &fc.terminal.gamma_pop;
        let p3_t = &self.derived.gamma_tilde5 - g * &fc.terminal.gamma_lead;
        let mut g1 = DMatrix::zeros(n, 2 * n);
        g1.view_mut((0, 0), (n, n)).copy_from(&p2_t);
        g1.view_mut((0, n), (n, n)).copy_from(&p3_t);
        g1
    }
}

/// Solve the standalone follower Riccati equation backward from `P1(T) = G`.
pub fn solve_p1(
    spec: &ModelSpec,
    _derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
) -> Result<MatrixPath> {
    let g = &spec.grid;
    let fc = &spec.follower_cost;
    let fd = &spec.follower;
    let rhs = move |t: f64, p: &DMatrix<f64>| {
        let a = fd.a.eval(g, t);
        let b = fd.b_ctrl.eval(g, t);
        let s = fc.s.eval(g, t);
        let q = fc.q.eval(g, t);
        let r_inv = inv.r_inv.eval(g, t);
        let gain = (p * &b + s.transpose()) * r_inv * (b.transpose() * p + &s);
        gain - p * &a - a.transpose() * p - q
    };
    let problem = MatrixOdeProblem::new(Direction::Backward, fc.terminal.g.clone(), "P1", rhs)
        .symmetrized();
    integrate_matrix_ode(&problem, g)
}

/// Solve the coupled `[P2, P3]` pair and evaluate the solvability certificate.
///
/// The certificate failing, or the integration escaping, is reported as a
/// non-solvable error rather than silently patched.
pub fn solve_p2_p3(
    spec: &ModelSpec,
    derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
    opts: &SolverOptions,
) -> Result<(MatrixPath, MatrixPath, SolvabilityCertificate)> {
    let n = spec.n;
    let coeffs = BlockCoefficients { spec, derived, inv };
    let certificate = certificate_for(&coeffs, opts)?;
    if !certificate.pass {
        let worst = certificate
            .min_singular_value
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        return Err(Error::non_solvable(
            "P2/P3 Riccati pair",
            format!("certificate test matrix nearly singular (min sigma {worst:.3e})"),
        ));
    }

    let rhs = |t: f64, p: &DMatrix<f64>| {
        p * coeffs.i1(t) * p - p * coeffs.h1(t) - coeffs.h2(t) * p - coeffs.q1(t)
    };
    let problem = MatrixOdeProblem::new(Direction::Backward, coeffs.g1(), "P2/P3", rhs);
    let block = integrate_matrix_ode(&problem, &spec.grid).map_err(|e| match e {
        Error::BlowUp { time, .. } => Error::non_solvable(
            "P2/P3 Riccati pair",
            format!("integration escaped at t = {time}"),
        ),
        other => other,
    })?;

    let mut p2 = Vec::with_capacity(block.len());
    let mut p3 = Vec::with_capacity(block.len());
    for m in block.values() {
        p2.push(m.view((0, 0), (n, n)).into_owned());
        p3.push(m.view((0, n), (n, n)).into_owned());
    }
    Ok((MatrixPath::new(p2)?, MatrixPath::new(p3)?, certificate))
}

fn certificate_for(
    coeffs: &BlockCoefficients,
    opts: &SolverOptions,
) -> Result<SolvabilityCertificate> {
    let spec = coeffs.spec;
    let n = spec.n;
    let dim = 3 * n;

    let h = |t: f64| {
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&coeffs.h1(t));
        m.view_mut((0, 2 * n), (2 * n, n)).copy_from(&(-coeffs.i1(t)));
        m.view_mut((2 * n, 0), (n, 2 * n)).copy_from(&(-coeffs.q1(t)));
        m.view_mut((2 * n, 2 * n), (n, n)).copy_from(&(-coeffs.h2(t)));
        m
    };
    let problem = MatrixOdeProblem::new(
        Direction::Backward,
        DMatrix::identity(dim, dim),
        "certificate fundamental matrix",
        move |t, theta| h(t) * theta,
    );
    let theta = integrate_matrix_ode(&problem, &spec.grid)?;

    let mut init = DMatrix::zeros(dim, 2 * n);
    init.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&DMatrix::identity(2 * n, 2 * n));
    init.view_mut((2 * n, 0), (n, 2 * n)).copy_from(&coeffs.g1());

    let mut min_sv = Vec::with_capacity(theta.len());
    let mut pass = true;
    for k in 0..theta.len() {
        let w = theta.at(k) * &init;
        let u = w.view((0, 0), (2 * n, 2 * n)).into_owned();
        let svd = u.svd(false, false);
        let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        min_sv.push(smin);
        if smin <= opts.cert_threshold * (1.0 + smax) {
            pass = false;
        }
    }
    Ok(SolvabilityCertificate {
        theta,
        min_singular_value: min_sv,
        pass,
        threshold: opts.cert_threshold,
    })
}

impl SolvabilityCertificate {
    /// Independent reconstruction of `[P2, P3]` from the fundamental matrix,
    /// `P(t) = V(t) U(t)^{-1}`. Diagnostic route; the production path is the
    /// direct Riccati integration.
    pub fn reconstruct_block_solution(&self, n: usize, g1: &DMatrix<f64>) -> Result<MatrixPath> {
        let mut init = DMatrix::zeros(3 * n, 2 * n);
        init.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&DMatrix::identity(2 * n, 2 * n));
        init.view_mut((2 * n, 0), (n, 2 * n)).copy_from(g1);
        let mut out = Vec::with_capacity(self.theta.len());
        for k in 0..self.theta.len() {
            let w = self.theta.at(k) * &init;
            let u = w.view((0, 0), (2 * n, 2 * n)).into_owned();
            let v = w.view((2 * n, 0), (n, 2 * n)).into_owned();
            let u_inv = u
                .try_inverse()
                .ok_or_else(|| Error::non_solvable("P2/P3 reconstruction", "singular U(t)"))?;
            out.push(v * u_inv);
        }
        MatrixPath::new(out)
    }
}

/// Terminal value `(Gmean' - I) G eta` of the follower affine term.
fn phi_terminal(spec: &ModelSpec) -> DMatrix<f64> {
    let n = spec.n;
    let fc = &spec.follower_cost;
    let m = (fc.terminal.gamma_mean.transpose() - DMatrix::identity(n, n))
        * &fc.terminal.g
        * &fc.terminal.eta;
    DMatrix::from_column_slice(n, 1, m.as_slice())
}

/// Homogeneous coefficient of the follower affine equation:
/// `A' + Abar' - P2 B R^{-1} B' - (I - Gmean') S' R^{-1} B'`.
fn phi_drift_matrix(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
    p2: &DMatrix<f64>,
    t: f64,
) -> DMatrix<f64> {
    let g = &spec.grid;
    let n = spec.n;
    let i = DMatrix::identity(n, n);
    let a = spec.follower.a.eval(g, t);
    let ab = spec.follower.a_bar.eval(g, t);
    let b = spec.follower.b_ctrl.eval(g, t);
    let s = spec.follower_cost.s.eval(g, t);
    let r_inv = inv.r_inv.eval(g, t);
    a.transpose() + ab.transpose()
        - p2 * &b * &r_inv * b.transpose()
        - (&i - spec.follower_cost.gamma_mean.eval(g, t).transpose())
            * s.transpose()
            * &r_inv
            * b.transpose()
}

/// Solve the follower affine term backward, driven by the leader's mean control.
pub fn solve_phi(
    spec: &ModelSpec,
    _derived: &DerivedCoefficients,
    inv: &CoefficientInverses,
    p2: &MatrixPath,
    p3: &MatrixPath,
    eu0: &MatrixPath,
) -> Result<MatrixPath> {
    let g = &spec.grid;
    let n = spec.n;
    if eu0.rows() != spec.k || eu0.cols() != 1 || !eu0.matches_grid(g) {
        return Err(Error::dimension("phi: mean leader control path"));
    }
    let i = DMatrix::identity(n, n);
    let rhs = move |t: f64, phi: &DMatrix<f64>| {
        let p2t = p2.eval(g, t);
        let p3t = p3.eval(g, t);
        let m = phi_drift_matrix(spec, inv, &p2t, t);
        let q = spec.follower_cost.q.eval(g, t);
        let drive = &p3t * spec.leader.b_ctrl.eval(g, t) * eu0.eval(g, t)
            + &p2t * spec.follower.b_aff.eval(g, t)
            + &p3t * spec.leader.b_aff.eval(g, t)
            + (spec.follower_cost.gamma_mean.eval(g, t).transpose() - &i)
                * q
                * spec.follower_cost.eta.eval(g, t);
        -(m * phi + drive)
    };
    let problem = MatrixOdeProblem::new(Direction::Backward, phi_terminal(spec), "phi", rhs);
    integrate_matrix_ode(&problem, g)
}

/// Forward integration of both filter error covariances from zero.
pub fn solve_filter_covariances(
    spec: &ModelSpec,
    inv: &CoefficientInverses,
) -> Result<(MatrixPath, MatrixPath)> {
    let g = &spec.grid;
    let n = spec.n;

    let follower_rhs = |t: f64, pi: &DMatrix<f64>| {
        let a = spec.follower.a.eval(g, t);
        let sg = spec.follower.sigma.eval(g, t);
        let sb = spec.follower.sigma_bar.eval(g, t);
        let h = spec.follower.obs.h.eval(g, t);
        let f_inv_t = inv.f_inv.eval(g, t).transpose();
        let gain = &sb + pi * h.transpose() * f_inv_t;
        &a * pi + pi * a.transpose() - &gain * gain.transpose() + &sg * sg.transpose()
            + &sb * sb.transpose()
    };
    let leader_rhs = |t: f64, pi: &DMatrix<f64>| {
        let a = spec.leader.a.eval(g, t);
        let sg = spec.leader.sigma.eval(g, t);
        let sb = spec.leader.sigma_bar.eval(g, t);
        let h = spec.leader.obs.h.eval(g, t);
        let f_inv_t = inv.f0_inv.eval(g, t).transpose();
        let gain = &sb + pi * h.transpose() * f_inv_t;
        &a * pi + pi * a.transpose() - &gain * gain.transpose() + &sg * sg.transpose()
            + &sb * sb.transpose()
    };

    let pi = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Forward, DMatrix::zeros(n, n), "Pi", follower_rhs)
            .symmetrized(),
        g,
    )?;
    let pi0 = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Forward, DMatrix::zeros(n, n), "Pi0", leader_rhs)
            .symmetrized(),
        g,
    )?;
    Ok((pi, pi0))
}

/// Solve the `3n x 3n` leader layer backward: the two non-symmetric Riccati
/// equations and the linear affine term on the dimension-expanded system.
pub fn solve_sigma_psi(
    spec: &ModelSpec,
    aug: &AugmentedLeaderSystem,
) -> Result<(MatrixPath, MatrixPath, MatrixPath)> {
    let g = &spec.grid;

    let sigma1_rhs = |t: f64, s1: &DMatrix<f64>| {
        let a0 = aug.a0.eval(g, t);
        let b0 = aug.b0.eval(g, t);
        let s0 = aug.s0.eval(g, t);
        let gain0 = aug.gain_state.eval(g, t);
        let gain1 = aug.gain_adjoint.eval(g, t);
        -(s1 * (&a0 + &b0 * &gain0)
            + (a0.transpose() + &s0 * &gain1) * s1
            + s1 * &b0 * &gain1 * s1
            + aug.q0.eval(g, t)
            + &s0 * &gain0)
    };
    let sigma1 = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Backward, aug.g0_terminal.clone(), "Sigma1", sigma1_rhs),
        g,
    )
    .map_err(escape_to_non_solvable("Sigma1"))?;

    let sigma2_rhs = |t: f64, s2: &DMatrix<f64>| {
        let a_sum = aug.a0.eval(g, t) + aug.a0_bar.eval(g, t);
        let b0 = aug.b0.eval(g, t);
        let s0 = aug.s0.eval(g, t);
        let b0_bar = aug.b0_bar.eval(g, t);
        let gain_sum = aug.gain_state.eval(g, t) + aug.gain_mean.eval(g, t);
        let gain1 = aug.gain_adjoint.eval(g, t);
        let coupling = &b0_bar + &s0;
        -(s2 * (&a_sum + &b0 * &gain_sum)
            + (a_sum.transpose() + &coupling * &gain1) * s2
            + s2 * (aug.c0.eval(g, t) + &b0 * &gain1) * s2
            + aug.q0.eval(g, t)
            + aug.q0_bar.eval(g, t)
            + &coupling * &gain_sum)
    };
    // Terminal: matching the ansatz against Phi(T) = G0 Xcheck + G1 E[X] + G2
    // gives Sigma2(T) - Sigma1(T) = G1, i.e. Sigma2(T) = G0 + G1.
    let sigma2 = integrate_matrix_ode(
        &MatrixOdeProblem::new(
            Direction::Backward,
            &aug.g0_terminal + &aug.g1_terminal,
            "Sigma2",
            sigma2_rhs,
        ),
        g,
    )
    .map_err(escape_to_non_solvable("Sigma2"))?;

    let psi_rhs = |t: f64, psi: &DMatrix<f64>| {
        let s2 = sigma2.eval(g, t);
        let a_sum_t = (aug.a0.eval(g, t) + aug.a0_bar.eval(g, t)).transpose();
        let b0 = aug.b0.eval(g, t);
        let gain1 = aug.gain_adjoint.eval(g, t);
        let coupling = aug.b0_bar.eval(g, t) + aug.s0.eval(g, t);
        -((a_sum_t + &s2 * aug.c0.eval(g, t) + &s2 * &b0 * &gain1 + &coupling * &gain1) * psi
            + &s2 * aug.d0.eval(g, t)
            + aug.d0_bar.eval(g, t))
    };
    let psi = integrate_matrix_ode(
        &MatrixOdeProblem::new(Direction::Backward, aug.g2_terminal.clone(), "psi", psi_rhs),
        g,
    )?;

    Ok((sigma1, sigma2, psi))
}

fn escape_to_non_solvable(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::BlowUp { time, .. } => {
            Error::non_solvable(name, format!("integration escaped at t = {time}"))
        }
        other => other,
    }
}

/// Convenience: max deviation from symmetry along a path.
pub fn max_asymmetry(path: &MatrixPath) -> f64 {
    path.values()
        .iter()
        .map(|m| (m - m.transpose()).amax() / (1.0 + m.amax()))
        .fold(0.0, f64::max)
}

/// Convenience: most negative symmetric-part eigenvalue along a path.
pub fn min_eigenvalue(path: &MatrixPath) -> f64 {
    path.values()
        .iter()
        .map(|m| {
            let sym = (m + m.transpose()) * 0.5;
            sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

