//! Model data: dynamics and cost coefficients of the leader-followers system.
//!
//! The population consists of one leader and `N` statistically identical
//! followers. States are `n`-dimensional, controls `k`-dimensional. Both
//! agents' drifts may involve their own state, their own mean, the follower
//! state average and (for followers) the leader's mean; each agent observes
//! only a noisy linear functional of its own state.
//!
//! All coefficients are deterministic functions of time sampled on a shared
//! [`TimeGrid`] and interpolated piecewise-linearly; weight matrices must
//! satisfy the standing convexity assumptions checked by [`validate_model`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::path::MatrixPath;

pub mod config;
pub mod cost;

pub use cost::{
    centralized_follower_cost, centralized_leader_cost, CostEstimate, FollowerCostData,
    LeaderCostData, PopulationTrajectories,
};

/// Linear observation channel `dY = (H x + Hbar E[x] + I_pop x_avg + h) dt + f dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    pub h: MatrixPath,
    pub h_bar: MatrixPath,
    /// Loading on the follower state average in the observation drift.
    pub i_pop: MatrixPath,
    pub h_aff: MatrixPath,
    /// Observation noise matrix; must stay invertible on the whole grid.
    pub f_noise: MatrixPath,
}

/// Leader state `dx0 = (A0 x0 + B0 u0 + Abar0 E[x0] + C0 x_avg + b0) dt + sigma0 dW0 + sigmabar0 dWbar0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderDynamics {
    pub a: MatrixPath,
    pub a_bar: MatrixPath,
    /// Loading on the follower state average.
    pub c: MatrixPath,
    pub b_ctrl: MatrixPath,
    pub b_aff: MatrixPath,
    pub sigma: MatrixPath,
    pub sigma_bar: MatrixPath,
    pub xi: DVector<f64>,
    pub obs: ObservationModel,
}

/// Follower state `dx_i = (A x_i + B u_i + Abar E[x_i] + C x_avg + F E[x0] + b) dt + sigma dW_i + sigmabar dWbar_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerDynamics {
    pub a: MatrixPath,
    pub a_bar: MatrixPath,
    pub c: MatrixPath,
    /// Loading on the leader's mean state.
    pub f_lead: MatrixPath,
    pub b_ctrl: MatrixPath,
    pub b_aff: MatrixPath,
    pub sigma: MatrixPath,
    pub sigma_bar: MatrixPath,
    pub xi: DVector<f64>,
    pub obs: ObservationModel,
}

/// Terminal penalty of the leader: `|x0(T) - G_pop x_avg(T) - G_mean E[x0](T) - eta|^2_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderTerminalCost {
    pub g: DMatrix<f64>,
    pub gamma_pop: DMatrix<f64>,
    pub gamma_mean: DMatrix<f64>,
    pub eta: DVector<f64>,
}

/// Running + terminal cost weights of the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderCost {
    pub q: MatrixPath,
    pub r: MatrixPath,
    /// Cross weight of the `2 <S0 (x0 - G_pop x_avg - G_mean E[x0]), u0>` term.
    pub s: MatrixPath,
    pub gamma_pop: MatrixPath,
    pub gamma_mean: MatrixPath,
    pub eta: MatrixPath,
    pub terminal: LeaderTerminalCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerTerminalCost {
    pub g: DMatrix<f64>,
    pub gamma_pop: DMatrix<f64>,
    pub gamma_mean: DMatrix<f64>,
    pub gamma_lead: DMatrix<f64>,
    pub gamma_lead_mean: DMatrix<f64>,
    pub eta: DVector<f64>,
}

/// Running + terminal cost weights of a follower.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerCost {
    pub q: MatrixPath,
    pub r: MatrixPath,
    /// Cross weight of the `2 <S (x_i - G_mean E[x_i]), u_i>` term.
    pub s: MatrixPath,
    pub gamma_pop: MatrixPath,
    pub gamma_mean: MatrixPath,
    pub gamma_lead: MatrixPath,
    pub gamma_lead_mean: MatrixPath,
    pub eta: MatrixPath,
    pub terminal: FollowerTerminalCost,
}

/// Complete coefficient set of the game on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub grid: TimeGrid,
    pub n: usize,
    pub k: usize,
    pub leader: LeaderDynamics,
    pub follower: FollowerDynamics,
    pub leader_cost: LeaderCost,
    pub follower_cost: FollowerCost,
}

/// Mean-coupling cost weights that recur in the adjoint equations.
///
/// The running-weight variants are paths, the terminal ones constant:
/// `tilde2 = Gm' Q Gm - Q Gm - Gm' Q` for the follower mean weight `Gm`,
/// `tilde3 = Gm' Q (Gl + Glm) - Q Glm` for the leader loadings, and the
/// analogous `tilde4/tilde5` (terminal, with `G`) and `tilde0/tilde1`
/// (leader, with `Q0`/`G0`).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCoefficients {
    pub gamma_tilde2: MatrixPath,
    pub gamma_tilde3: MatrixPath,
    pub gamma_tilde4: DMatrix<f64>,
    pub gamma_tilde5: DMatrix<f64>,
    pub gamma_tilde0: MatrixPath,
    pub gamma_tilde1: DMatrix<f64>,
}

/// Numerical slack used by the assumption checks.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// PSD slack factor: eigenvalues below `-psd_tol * (1 + ||M||)` are violations.
    pub psd_tol: f64,
    /// Condition-number bound above which a matrix counts as singular.
    pub cond_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            psd_tol: 1e-10,
            cond_max: 1e12,
        }
    }
}

/// One finding of [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub message: String,
}

/// Outcome of the model assumption check; empty means the model is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    fn push(&mut self, message: String) {
        self.violations.push(Violation { message });
    }
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = svd.singular_values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

impl ModelSpec {
    /// Smallest relevant spectral slack for a matrix of this magnitude.
    fn psd_slack(m: &DMatrix<f64>, tol: &Tolerances) -> f64 {
        tol.psd_tol * (1.0 + m.amax())
    }

    fn check_path_dims(&self, name: &str, p: &MatrixPath, rows: usize, cols: usize) -> Result<()> {
        if !p.matches_grid(&self.grid) {
            return Err(Error::dimension(format!(
                "{name}: {} samples, grid has {}",
                p.len(),
                self.grid.len()
            )));
        }
        if p.rows() != rows || p.cols() != cols {
            return Err(Error::dimension(format!(
                "{name}: {}x{}, expected {rows}x{cols}",
                p.rows(),
                p.cols()
            )));
        }
        Ok(())
    }

    /// Structural consistency of every path against `(n, k)` and the grid.
    pub fn check_dimensions(&self) -> Result<()> {
        let (n, k) = (self.n, self.k);
        if n == 0 || k == 0 {
            return Err(Error::dimension("state and control dimensions must be positive"));
        }
        let ld = &self.leader;
        self.check_path_dims("leader.a", &ld.a, n, n)?;
        self.check_path_dims("leader.a_bar", &ld.a_bar, n, n)?;
        self.check_path_dims("leader.c", &ld.c, n, n)?;
        self.check_path_dims("leader.b_ctrl", &ld.b_ctrl, n, k)?;
        self.check_path_dims("leader.b_aff", &ld.b_aff, n, 1)?;
        self.check_path_dims("leader.sigma", &ld.sigma, n, n)?;
        self.check_path_dims("leader.sigma_bar", &ld.sigma_bar, n, n)?;
        if ld.xi.len() != n {
            return Err(Error::dimension("leader.xi length"));
        }
        self.check_path_dims("leader.obs.h", &ld.obs.h, n, n)?;
        self.check_path_dims("leader.obs.h_bar", &ld.obs.h_bar, n, n)?;
        self.check_path_dims("leader.obs.i_pop", &ld.obs.i_pop, n, n)?;
        self.check_path_dims("leader.obs.h_aff", &ld.obs.h_aff, n, 1)?;
        self.check_path_dims("leader.obs.f_noise", &ld.obs.f_noise, n, n)?;

        let fd = &self.follower;
        self.check_path_dims("follower.a", &fd.a, n, n)?;
        self.check_path_dims("follower.a_bar", &fd.a_bar, n, n)?;
        self.check_path_dims("follower.c", &fd.c, n, n)?;
        self.check_path_dims("follower.f_lead", &fd.f_lead, n, n)?;
        self.check_path_dims("follower.b_ctrl", &fd.b_ctrl, n, k)?;
        self.check_path_dims("follower.b_aff", &fd.b_aff, n, 1)?;
        self.check_path_dims("follower.sigma", &fd.sigma, n, n)?;
        self.check_path_dims("follower.sigma_bar", &fd.sigma_bar, n, n)?;
        if fd.xi.len() != n {
            return Err(Error::dimension("follower.xi length"));
        }
        self.check_path_dims("follower.obs.h", &fd.obs.h, n, n)?;
        self.check_path_dims("follower.obs.h_bar", &fd.obs.h_bar, n, n)?;
        self.check_path_dims("follower.obs.i_pop", &fd.obs.i_pop, n, n)?;
        self.check_path_dims("follower.obs.h_aff", &fd.obs.h_aff, n, 1)?;
        self.check_path_dims("follower.obs.f_noise", &fd.obs.f_noise, n, n)?;

        let lc = &self.leader_cost;
        self.check_path_dims("leader_cost.q", &lc.q, n, n)?;
        self.check_path_dims("leader_cost.r", &lc.r, k, k)?;
        self.check_path_dims("leader_cost.s", &lc.s, k, n)?;
        self.check_path_dims("leader_cost.gamma_pop", &lc.gamma_pop, n, n)?;
        self.check_path_dims("leader_cost.gamma_mean", &lc.gamma_mean, n, n)?;
        self.check_path_dims("leader_cost.eta", &lc.eta, n, 1)?;
        for (nm, m) in [
            ("leader_cost.terminal.g", &lc.terminal.g),
            ("leader_cost.terminal.gamma_pop", &lc.terminal.gamma_pop),
            ("leader_cost.terminal.gamma_mean", &lc.terminal.gamma_mean),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::dimension(nm));
            }
        }
        if lc.terminal.eta.len() != n {
            return Err(Error::dimension("leader_cost.terminal.eta length"));
        }

        let fc = &self.follower_cost;
        self.check_path_dims("follower_cost.q", &fc.q, n, n)?;
        self.check_path_dims("follower_cost.r", &fc.r, k, k)?;
        self.check_path_dims("follower_cost.s", &fc.s, k, n)?;
        self.check_path_dims("follower_cost.gamma_pop", &fc.gamma_pop, n, n)?;
        self.check_path_dims("follower_cost.gamma_mean", &fc.gamma_mean, n, n)?;
        self.check_path_dims("follower_cost.gamma_lead", &fc.gamma_lead, n, n)?;
        self.check_path_dims("follower_cost.gamma_lead_mean", &fc.gamma_lead_mean, n, n)?;
        self.check_path_dims("follower_cost.eta", &fc.eta, n, 1)?;
        for (nm, m) in [
            ("follower_cost.terminal.g", &fc.terminal.g),
            ("follower_cost.terminal.gamma_pop", &fc.terminal.gamma_pop),
            ("follower_cost.terminal.gamma_mean", &fc.terminal.gamma_mean),
            ("follower_cost.terminal.gamma_lead", &fc.terminal.gamma_lead),
            ("follower_cost.terminal.gamma_lead_mean", &fc.terminal.gamma_lead_mean),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::dimension(nm));
            }
        }
        if fc.terminal.eta.len() != n {
            return Err(Error::dimension("follower_cost.terminal.eta length"));
        }
        Ok(())
    }
}

/// Check the standing coefficient assumptions and collect every violation.
///
/// Structural problems (dimension mismatches) are reported as a hard error,
/// distinct from assumption violations. The returned report is empty exactly
/// when the model satisfies all conditions within the given slack.
pub fn validate_model(spec: &ModelSpec) -> Result<ValidationReport> {
    validate_model_with(spec, &Tolerances::default())
}

pub fn validate_model_with(spec: &ModelSpec, tol: &Tolerances) -> Result<ValidationReport> {
    spec.check_dimensions()?;
    let mut report = ValidationReport::default();

    let sym_tol = 1e-9;
    for k in 0..spec.grid.len() {
        let t = spec.grid.t(k);

        for (name, m) in [
            ("Q", spec.follower_cost.q.at(k)),
            ("Q0", spec.leader_cost.q.at(k)),
            ("R", spec.follower_cost.r.at(k)),
            ("R0", spec.leader_cost.r.at(k)),
        ] {
            if !is_symmetric(m, sym_tol) {
                report.push(format!("{name} not symmetric at t={t}"));
            }
        }

        for (name, m) in [("Q", spec.follower_cost.q.at(k)), ("Q0", spec.leader_cost.q.at(k))] {
            let min = min_symmetric_eigenvalue(m);
            if min < -ModelSpec::psd_slack(m, tol) {
                report.push(format!("{name} not PSD at t={t} (min eigenvalue {min:.3e})"));
            }
        }

        for (name, m) in [("R", spec.follower_cost.r.at(k)), ("R0", spec.leader_cost.r.at(k))] {
            let min = min_symmetric_eigenvalue(m);
            if min <= ModelSpec::psd_slack(m, tol) {
                report.push(format!(
                    "{name} not positive definite at t={t} (min eigenvalue {min:.3e})"
                ));
            }
        }

        // Convexity of the running cost in (x, u): Q - S' R^{-1} S >= 0.
        for (label, q, s, r) in [
            (
                "Q − SᵀR⁻¹S",
                spec.follower_cost.q.at(k),
                spec.follower_cost.s.at(k),
                spec.follower_cost.r.at(k),
            ),
            (
                "Q0 − S0ᵀR0⁻¹S0",
                spec.leader_cost.q.at(k),
                spec.leader_cost.s.at(k),
                spec.leader_cost.r.at(k),
            ),
        ] {
            if let Some(r_inv) = r.clone().try_inverse() {
                let schur = q - s.transpose() * &r_inv * s;
                let min = min_symmetric_eigenvalue(&schur);
                if min < -ModelSpec::psd_slack(&schur, tol) {
                    report.push(format!("{label} not PSD at t={t} (min eigenvalue {min:.3e})"));
                }
            }
        }

        for (name, m) in [
            ("f", spec.follower.obs.f_noise.at(k)),
            ("f0", spec.leader.obs.f_noise.at(k)),
        ] {
            let cond = condition_number(m);
            if !(cond < tol.cond_max) {
                report.push(format!("{name} not invertible at t={t} (condition number {cond:.3e})"));
            }
        }
    }

    for (name, m) in [("G", &spec.follower_cost.terminal.g), ("G0", &spec.leader_cost.terminal.g)] {
        if !is_symmetric(m, sym_tol) {
            report.push(format!("{name} not symmetric"));
        }
        let min = min_symmetric_eigenvalue(m);
        if min < -ModelSpec::psd_slack(m, tol) {
            report.push(format!("{name} not PSD (min eigenvalue {min:.3e})"));
        }
    }

    Ok(report)
}

/// Compute the six mean-coupling weight combinations from the raw weights.
pub fn derive_coefficients(spec: &ModelSpec) -> Result<DerivedCoefficients> {
    spec.check_dimensions()?;
    let grid = &spec.grid;
    let fc = &spec.follower_cost;
    let lc = &spec.leader_cost;

    let mut gt2 = Vec::with_capacity(grid.len());
    let mut gt3 = Vec::with_capacity(grid.len());
    let mut gt0 = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let q = fc.q.at(k);
        let gm = fc.gamma_mean.at(k);
        let gmt = gm.transpose();
        gt2.push(&gmt * q * gm - q * gm - &gmt * q);
        gt3.push(&gmt * q * (fc.gamma_lead.at(k) + fc.gamma_lead_mean.at(k)) - q * fc.gamma_lead_mean.at(k));

        let q0 = lc.q.at(k);
        let g0m = lc.gamma_mean.at(k);
        let g0mt = g0m.transpose();
        gt0.push(&g0mt * q0 * g0m - q0 * g0m - &g0mt * q0);
    }

    let g = &fc.terminal.g;
    let g4 = &fc.terminal.gamma_mean;
    let g4t = g4.transpose();
    let gamma_tilde4 = &g4t * g * g4 - g * g4 - &g4t * g;
    let gamma_tilde5 =
        &g4t * g * (&fc.terminal.gamma_lead + &fc.terminal.gamma_lead_mean) - g * &fc.terminal.gamma_lead_mean;

    let g0 = &lc.terminal.g;
    let g1 = &lc.terminal.gamma_mean;
    let g1t = g1.transpose();
    let gamma_tilde1 = &g1t * g0 * g1 - g0 * g1 - &g1t * g0;

    Ok(DerivedCoefficients {
        gamma_tilde2: MatrixPath::new(gt2)?,
        gamma_tilde3: MatrixPath::new(gt3)?,
        gamma_tilde4,
        gamma_tilde5,
        gamma_tilde0: MatrixPath::new(gt0)?,
        gamma_tilde1,
    })
}

/// Per-grid-point inverses of the weight and noise matrices, with a hard
/// failure on near-singularity instead of silent regularization.
#[derive(Debug, Clone)]
pub struct CoefficientInverses {
    pub r_inv: MatrixPath,
    pub r0_inv: MatrixPath,
    pub f_inv: MatrixPath,
    pub f0_inv: MatrixPath,
}

impl CoefficientInverses {
    pub fn compute(spec: &ModelSpec) -> Result<Self> {
        Self::compute_with(spec, &Tolerances::default())
    }

    pub fn compute_with(spec: &ModelSpec, tol: &Tolerances) -> Result<Self> {
        let invert_path = |name: &str, p: &MatrixPath| -> Result<MatrixPath> {
            let mut out = Vec::with_capacity(p.len());
            for k in 0..p.len() {
                let m = p.at(k);
                let cond = condition_number(m);
                if !(cond < tol.cond_max) {
                    return Err(Error::invalid(format!(
                        "{name} nearly singular at t={} (condition number {cond:.3e})",
                        spec.grid.t(k)
                    )));
                }
                let inv = m.clone().try_inverse().ok_or_else(|| {
                    Error::invalid(format!("{name} not invertible at t={}", spec.grid.t(k)))
                })?;
                out.push(inv);
            }
            MatrixPath::new(out)
        };
        Ok(CoefficientInverses {
            r_inv: invert_path("R", &spec.follower_cost.r)?,
            r0_inv: invert_path("R0", &spec.leader_cost.r)?,
            f_inv: invert_path("f", &spec.follower.obs.f_noise)?,
            f0_inv: invert_path("f0", &spec.leader.obs.f_noise)?,
        })
    }
}

/// Scalar (`n = k = 1`) model description, mainly for tests and the
/// product-planning application. All fields are constants over the grid;
/// weights default to the minimal usable values (`r = r0 = f = f0 = 1`).
#[derive(Debug, Clone, Copy)]
pub struct ScalarModel {
    pub t_end: f64,
    pub steps: usize,
    // leader dynamics
    pub a0: f64,
    pub a0_bar: f64,
    pub c0: f64,
    pub b0_ctrl: f64,
    pub b0_aff: f64,
    pub sigma0: f64,
    pub sigma0_bar: f64,
    pub xi0: f64,
    pub h0: f64,
    pub h0_bar: f64,
    pub i0_pop: f64,
    pub h0_aff: f64,
    pub f0_noise: f64,
    // follower dynamics
    pub a: f64,
    pub a_bar: f64,
    pub c: f64,
    pub f_lead: f64,
    pub b_ctrl: f64,
    pub b_aff: f64,
    pub sigma: f64,
    pub sigma_bar: f64,
    pub xi: f64,
    pub h: f64,
    pub h_bar: f64,
    pub i_pop: f64,
    pub h_aff: f64,
    pub f_noise: f64,
    // leader cost
    pub q0: f64,
    pub r0: f64,
    pub s0: f64,
    pub gamma0_pop: f64,
    pub gamma0_mean: f64,
    pub eta0: f64,
    pub g0: f64,
    pub gamma1_pop: f64,
    pub gamma1_mean: f64,
    pub eta1: f64,
    // follower cost
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub gamma2_pop: f64,
    pub gamma2_mean: f64,
    pub gamma3_lead: f64,
    pub gamma3_lead_mean: f64,
    pub eta2: f64,
    pub g: f64,
    pub gamma4_pop: f64,
    pub gamma4_mean: f64,
    pub gamma5_lead: f64,
    pub gamma5_lead_mean: f64,
    pub eta4: f64,
}

impl Default for ScalarModel {
    fn default() -> Self {
        ScalarModel {
            t_end: 1.0,
            steps: 100,
            a0: 0.0,
            a0_bar: 0.0,
            c0: 0.0,
            b0_ctrl: 0.0,
            b0_aff: 0.0,
            sigma0: 0.0,
            sigma0_bar: 0.0,
            xi0: 0.0,
            h0: 0.0,
            h0_bar: 0.0,
            i0_pop: 0.0,
            h0_aff: 0.0,
            f0_noise: 1.0,
            a: 0.0,
            a_bar: 0.0,
            c: 0.0,
            f_lead: 0.0,
            b_ctrl: 0.0,
            b_aff: 0.0,
            sigma: 0.0,
            sigma_bar: 0.0,
            xi: 0.0,
            h: 0.0,
            h_bar: 0.0,
            i_pop: 0.0,
            h_aff: 0.0,
            f_noise: 1.0,
            q0: 0.0,
            r0: 1.0,
            s0: 0.0,
            gamma0_pop: 0.0,
            gamma0_mean: 0.0,
            eta0: 0.0,
            g0: 0.0,
            gamma1_pop: 0.0,
            gamma1_mean: 0.0,
            eta1: 0.0,
            q: 0.0,
            r: 1.0,
            s: 0.0,
            gamma2_pop: 0.0,
            gamma2_mean: 0.0,
            gamma3_lead: 0.0,
            gamma3_lead_mean: 0.0,
            eta2: 0.0,
            g: 0.0,
            gamma4_pop: 0.0,
            gamma4_mean: 0.0,
            gamma5_lead: 0.0,
            gamma5_lead_mean: 0.0,
            eta4: 0.0,
        }
    }
}

impl ScalarModel {
    pub fn build(&self) -> ModelSpec {
        let grid = TimeGrid::new(self.t_end, self.steps).expect("scalar model grid");
        let sp = |v: f64| MatrixPath::scalar(&grid, v);
        let sm = |v: f64| DMatrix::from_element(1, 1, v);
        let sv = |v: f64| DVector::from_element(1, v);

        ModelSpec {
            grid,
            n: 1,
            k: 1,
            leader: LeaderDynamics {
                a: sp(self.a0),
                a_bar: sp(self.a0_bar),
                c: sp(self.c0),
                b_ctrl: sp(self.b0_ctrl),
                b_aff: sp(self.b0_aff),
                sigma: sp(self.sigma0),
                sigma_bar: sp(self.sigma0_bar),
                xi: sv(self.xi0),
                obs: ObservationModel {
                    h: sp(self.h0),
                    h_bar: sp(self.h0_bar),
                    i_pop: sp(self.i0_pop),
                    h_aff: sp(self.h0_aff),
                    f_noise: sp(self.f0_noise),
                },
            },
            follower: FollowerDynamics {
                a: sp(self.a),
                a_bar: sp(self.a_bar),
                c: sp(self.c),
                f_lead: sp(self.f_lead),
                b_ctrl: sp(self.b_ctrl),
                b_aff: sp(self.b_aff),
                sigma: sp(self.sigma),
                sigma_bar: sp(self.sigma_bar),
                xi: sv(self.xi),
                obs: ObservationModel {
                    h: sp(self.h),
                    h_bar: sp(self.h_bar),
                    i_pop: sp(self.i_pop),
                    h_aff: sp(self.h_aff),
                    f_noise: sp(self.f_noise),
                },
            },
            leader_cost: LeaderCost {
                q: sp(self.q0),
                r: sp(self.r0),
                s: sp(self.s0),
                gamma_pop: sp(self.gamma0_pop),
                gamma_mean: sp(self.gamma0_mean),
                eta: sp(self.eta0),
                terminal: LeaderTerminalCost {
                    g: sm(self.g0),
                    gamma_pop: sm(self.gamma1_pop),
                    gamma_mean: sm(self.gamma1_mean),
                    eta: sv(self.eta1),
                },
            },
            follower_cost: FollowerCost {
                q: sp(self.q),
                r: sp(self.r),
                s: sp(self.s),
                gamma_pop: sp(self.gamma2_pop),
                gamma_mean: sp(self.gamma2_mean),
                gamma_lead: sp(self.gamma3_lead),
                gamma_lead_mean: sp(self.gamma3_lead_mean),
                eta: sp(self.eta2),
                terminal: FollowerTerminalCost {
                    g: sm(self.g),
                    gamma_pop: sm(self.gamma4_pop),
                    gamma_mean: sm(self.gamma4_mean),
                    gamma_lead: sm(self.gamma5_lead),
                    gamma_lead_mean: sm(self.gamma5_lead_mean),
                    eta: sv(self.eta4),
                },
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slack_scalar_model() -> ModelSpec {
        ScalarModel {
            q: 1.0,
            q0: 1.0,
            ..Default::default()
        }
        .build()
    }

    #[test]
    fn all_slack_model_validates_clean() {
        let spec = slack_scalar_model();
        let report = validate_model(&spec).unwrap();
        assert!(report.is_valid(), "unexpected violations: {:?}", report.violations);
    }

    #[test]
    fn zero_r_is_flagged_at_t0() {
        let spec = ScalarModel {
            q: 1.0,
            r: 0.0,
            ..Default::default()
        }
        .build();
        let report = validate_model(&spec).unwrap();
        assert!(report.contains("R not positive definite at t=0"), "{:?}", report.violations);
    }

    #[test]
    fn indefinite_schur_complement_is_flagged() {
        // n = 1, Q = 1, R = 1, S = 2: Q - S'R^{-1}S = 1 - 4 = -3 < 0.
        let spec = ScalarModel {
            q: 1.0,
            r: 1.0,
            s: 2.0,
            ..Default::default()
        }
        .build();
        let report = validate_model(&spec).unwrap();
        assert!(report.contains("Q − SᵀR⁻¹S not PSD"), "{:?}", report.violations);
    }

    #[test]
    fn validation_is_pure_and_idempotent() {
        let spec = ScalarModel {
            q: 1.0,
            r: 0.0,
            s: 3.0,
            ..Default::default()
        }
        .build();
        let r1 = validate_model(&spec).unwrap();
        let r2 = validate_model(&spec).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let mut spec = slack_scalar_model();
        spec.n = 2;
        assert!(matches!(validate_model(&spec), Err(Error::Dimension { .. })));
    }

    #[test]
    fn derived_vanish_when_mean_weight_is_zero() {
        let spec = ScalarModel {
            q: 5.0,
            ..Default::default()
        }
        .build();
        let d = derive_coefficients(&spec).unwrap();
        assert_eq!(d.gamma_tilde2.max_abs(), 0.0);
    }

    #[test]
    fn derived_gamma_tilde3_scalar_case() {
        // Q = 5, Gm = 0, Gl = 0.5, Glm = 0: tilde3 = 0.
        let spec = ScalarModel {
            q: 5.0,
            gamma3_lead: 0.5,
            ..Default::default()
        }
        .build();
        let d = derive_coefficients(&spec).unwrap();
        assert_eq!(d.gamma_tilde3.max_abs(), 0.0);
    }

    #[test]
    fn derived_gamma_tilde1_scalar_case() {
        // G0 = 1, terminal mean weight 1: tilde1 = 1 - 1 - 1 = -1.
        let spec = ScalarModel {
            g0: 1.0,
            gamma1_mean: 1.0,
            ..Default::default()
        }
        .build();
        let d = derive_coefficients(&spec).unwrap();
        assert_eq!(d.gamma_tilde1[(0, 0)], -1.0);
    }

    #[test]
    fn derived_regeneration_is_bit_identical() {
        let spec = ScalarModel {
            q: 2.5,
            q0: 1.5,
            gamma2_mean: 0.3,
            gamma3_lead: 0.7,
            gamma3_lead_mean: -0.2,
            g: 1.1,
            gamma4_mean: 0.4,
            gamma5_lead: 0.6,
            g0: 0.9,
            gamma1_mean: -0.5,
            gamma0_mean: 0.25,
            ..Default::default()
        }
        .build();
        let d1 = derive_coefficients(&spec).unwrap();
        let d2 = derive_coefficients(&spec).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn singular_f_noise_is_flagged() {
        let spec = ScalarModel {
            q: 1.0,
            f_noise: 0.0,
            ..Default::default()
        }
        .build();
        let report = validate_model(&spec).unwrap();
        assert!(report.contains("f not invertible"), "{:?}", report.violations);
        assert!(CoefficientInverses::compute(&spec).is_err());
    }
}
