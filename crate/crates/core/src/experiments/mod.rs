//! Empirical verification campaigns: approximation-gap decay in the
//! population size and unilateral-deviation margins at the equilibrium.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filtersim::{
    limiting_costs, perturbation_cost_follower, perturbation_cost_leader, simulate_population,
    ClosedLoop, Perturbation, PerturbationOutcome, SimConfig,
};
use crate::model::ModelSpec;
use crate::path::MatrixPath;
use crate::strategy::StackelbergSolution;

pub mod sticky;

pub use sticky::{build_sticky_model, sticky_demo, StickyDemoReport, StickyPriceParams};

/// Configuration of a population-size decay sweep.
#[derive(Debug, Clone)]
pub struct DecaySweepConfig {
    /// Strictly increasing population sizes, at least 3 of them.
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub seed: u64,
}

impl DecaySweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.len() < 3 {
            return Err(Error::invalid("decay sweep needs at least 3 population sizes"));
        }
        if !self.n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("population sizes must be strictly increasing"));
        }
        Ok(())
    }
}

/// Gap statistics at one population size.
#[derive(Debug, Clone)]
pub struct DecayPoint {
    pub n_agents: usize,
    /// `sup_t` mean of `|x_avg - E x_i|^2`.
    pub gap_state_avg: f64,
    /// `sup_t` mean of `|x0 - x0_lim|^2`.
    pub gap_leader_state: f64,
    /// `|J_i_finite - J_i_limit|`.
    pub cost_gap_follower: f64,
    /// `|J0_finite - J0_limit|`.
    pub cost_gap_leader: f64,
    pub failure: Option<String>,
}

/// Least-squares line fit on log-log data with a 95% slope interval.
#[derive(Debug, Clone, Copy)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_half_width: f64,
}

/// Two-sided 97.5% Student-t quantile for small samples.
fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 10] =
        [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    if df == 0 {
        f64::INFINITY
    } else if df <= 10 {
        TABLE[df - 1]
    } else {
        2.0
    }
}

/// OLS fit of `log y` against `log x`; `None` when any value is non-positive
/// (degenerate data, e.g. a noise-free model).
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    if xs.iter().chain(ys.iter()).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let df = lx.len().saturating_sub(2);
    let se = if df > 0 { (ss_res / df as f64 / sxx).sqrt() } else { f64::INFINITY };
    Some(LogLogFit {
        slope,
        intercept,
        slope_half_width: t_quantile_975(df) * se,
    })
}

/// Full decay-sweep report.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub points: Vec<DecayPoint>,
    pub fit_state_avg: Option<LogLogFit>,
    pub fit_leader_state: Option<LogLogFit>,
    pub fit_cost_follower: Option<LogLogFit>,
    pub fit_cost_leader: Option<LogLogFit>,
    /// All gaps at noise-free machine scale; slopes are meaningless.
    pub degenerate: bool,
    /// Limiting costs shared by every sweep point.
    pub limit_cost_leader: f64,
    pub limit_cost_follower: f64,
}

impl DecayReport {
    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "decay sweep ({} population sizes)", self.points.len());
        let _ = writeln!(
            out,
            "limiting costs: J0 = {:.6}, J_i = {:.6}",
            self.limit_cost_leader, self.limit_cost_follower
        );
        let _ = writeln!(
            out,
            "{:>6} {:>14} {:>14} {:>14} {:>14}",
            "N", "E|xavg-Exi|^2", "E|x0-x0lim|^2", "|Ji-Ji_lim|", "|J0-J0_lim|"
        );
        for p in &self.points {
            match &p.failure {
                Some(f) => {
                    let _ = writeln!(out, "{:>6} failed: {f}", p.n_agents);
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
                        p.n_agents, p.gap_state_avg, p.gap_leader_state, p.cost_gap_follower,
                        p.cost_gap_leader
                    );
                }
            }
        }
        if self.degenerate {
            let _ = writeln!(out, "gaps at machine scale; slopes degenerate");
        }
        let mut fit_line = |name: &str, fit: &Option<LogLogFit>| {
            let _ = match fit {
                Some(f) => writeln!(
                    out,
                    "slope[{name}] = {:.4} +/- {:.4}",
                    f.slope, f.slope_half_width
                ),
                None => writeln!(out, "slope[{name}] = degenerate"),
            };
        };
        fit_line("state-avg mse", &self.fit_state_avg);
        fit_line("leader mse", &self.fit_leader_state);
        fit_line("follower cost gap", &self.fit_cost_follower);
        fit_line("leader cost gap", &self.fit_cost_leader);
        out
    }
}

/// Run the finite-N simulation across population sizes and fit decay slopes.
///
/// Limiting and finite-N runs share per-agent noise streams (common random
/// numbers), so the cost gaps are measured with tightly paired noise.
pub fn decay_sweep(
    spec: &ModelSpec,
    sol: &StackelbergSolution,
    config: &DecaySweepConfig,
) -> Result<DecayReport> {
    config.validate()?;
    let cl = ClosedLoop::from_solution(spec, sol)?;
    let (j0_lim, ji_lim) = limiting_costs(spec, &cl, config.paths, config.seed)?;

    let mut points = Vec::with_capacity(config.n_list.len());
    for &n_agents in &config.n_list {
        let cfg = SimConfig::new(n_agents, config.paths, config.seed);
        match simulate_population(spec, &cl, &cfg) {
            Ok(r) => points.push(DecayPoint {
                n_agents,
                gap_state_avg: r.sup_gap_state_avg,
                gap_leader_state: r.sup_gap_leader,
                cost_gap_follower: (r.cost_follower.value - ji_lim.value).abs(),
                cost_gap_leader: (r.cost_leader.value - j0_lim.value).abs(),
                failure: None,
            }),
            Err(e) => points.push(DecayPoint {
                n_agents,
                gap_state_avg: f64::NAN,
                gap_leader_state: f64::NAN,
                cost_gap_follower: f64::NAN,
                cost_gap_leader: f64::NAN,
                failure: Some(e.to_string()),
            }),
        }
    }

    let ok: Vec<&DecayPoint> = points.iter().filter(|p| p.failure.is_none()).collect();
    let xs: Vec<f64> = ok.iter().map(|p| p.n_agents as f64).collect();
    let col = |f: fn(&DecayPoint) -> f64| -> Vec<f64> { ok.iter().map(|p| f(p)).collect() };

    let degenerate = ok
        .iter()
        .all(|p| p.gap_state_avg < 1e-20 && p.gap_leader_state < 1e-20);

    Ok(DecayReport {
        fit_state_avg: log_log_fit(&xs, &col(|p| p.gap_state_avg)),
        fit_leader_state: log_log_fit(&xs, &col(|p| p.gap_leader_state)),
        fit_cost_follower: log_log_fit(&xs, &col(|p| p.cost_gap_follower)),
        fit_cost_leader: log_log_fit(&xs, &col(|p| p.cost_gap_leader)),
        degenerate,
        limit_cost_leader: j0_lim.value,
        limit_cost_follower: ji_lim.value,
        points,
    })
}

/// Margin report of the unilateral-deviation check.
#[derive(Debug, Clone)]
pub struct NashCheckReport {
    pub n_agents: usize,
    pub eps: f64,
    /// Per direction: paired cost increase of the deviating follower.
    pub follower_margins: Vec<PerturbationOutcome>,
    /// Per direction: paired cost increase of the deviating leader.
    pub leader_margins: Vec<PerturbationOutcome>,
    pub worst_follower_margin: f64,
    pub worst_leader_margin: f64,
}

impl NashCheckReport {
    pub fn worst_margin(&self) -> f64 {
        self.worst_follower_margin.min(self.worst_leader_margin)
    }

    /// Margin floor `-(tolerance + 3 SE)` satisfied by every direction?
    pub fn passes(&self, tolerance: f64) -> bool {
        self.follower_margins
            .iter()
            .chain(self.leader_margins.iter())
            .all(|m| m.diff_mean >= -(tolerance + 3.0 * m.diff_se))
    }

    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "deviation margins at N = {}, eps = {}",
            self.n_agents, self.eps
        );
        for (i, m) in self.follower_margins.iter().enumerate() {
            let _ = writeln!(
                out,
                "follower dir {i:>2}: margin = {:+.6e} (se {:.2e})",
                m.diff_mean, m.diff_se
            );
        }
        for (i, m) in self.leader_margins.iter().enumerate() {
            let _ = writeln!(
                out,
                "leader   dir {i:>2}: margin = {:+.6e} (se {:.2e})",
                m.diff_mean, m.diff_se
            );
        }
        let _ = writeln!(out, "worst follower margin = {:+.6e}", self.worst_follower_margin);
        let _ = writeln!(out, "worst leader   margin = {:+.6e}", self.worst_leader_margin);
        out
    }
}

/// Random admissible deviation: smooth affine part plus feedback on the
/// deviating agent's own filtered state.
fn random_perturbation(
    spec: &ModelSpec,
    rng: &mut impl Rng,
    eps: f64,
) -> Result<Perturbation> {
    let grid = &spec.grid;
    let k = spec.k;
    let n = spec.n;
    let c0: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c1: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c2: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t_end = grid.t_end();
    let affine = MatrixPath::from_fn(grid, |t| {
        DMatrix::from_fn(k, 1, |r, _| {
            c0[r] + c1[r] * (std::f64::consts::PI * t / t_end).sin()
                + c2[r] * (std::f64::consts::PI * t / t_end).cos()
        })
    })?;
    let feedback = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-0.5..0.5));
    Ok(Perturbation { eps, affine, feedback })
}

/// Deviation margins for `num_directions` random perturbations of the
/// representative follower and of the leader.
pub fn epsilon_nash_check(
    spec: &ModelSpec,
    sol: &StackelbergSolution,
    n_agents: usize,
    paths: usize,
    seed: u64,
    num_directions: usize,
    eps: f64,
) -> Result<NashCheckReport> {
    let cl = ClosedLoop::from_solution(spec, sol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut follower_margins = Vec::with_capacity(num_directions);
    let mut leader_margins = Vec::with_capacity(num_directions);
    for _ in 0..num_directions {
        let pert_f = random_perturbation(spec, &mut rng, eps)?;
        follower_margins.push(perturbation_cost_follower(
            spec, &cl, n_agents, paths, seed, &pert_f,
        )?);
        let pert_l = random_perturbation(spec, &mut rng, eps)?;
        leader_margins.push(perturbation_cost_leader(
            spec, sol, &cl, n_agents, paths, seed, &pert_l,
        )?);
    }

    let worst_follower_margin =
        follower_margins.iter().map(|m| m.diff_mean).fold(f64::INFINITY, f64::min);
    let worst_leader_margin =
        leader_margins.iter().map(|m| m.diff_mean).fold(f64::INFINITY, f64::min);

    Ok(NashCheckReport {
        n_agents,
        eps,
        follower_margins,
        leader_margins,
        worst_follower_margin,
        worst_leader_margin,
    })
}
