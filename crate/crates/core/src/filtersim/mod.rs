//! Euler-Maruyama simulation of the finite closed-loop population with
//! per-agent Kalman-Bucy filters.
//!
//! Each path advances the leader's true state, a limiting leader state
//! driven by the same noise, every follower's true state, and every agent's
//! filter. Filters are driven by innovations reconstructed from observation
//! increments, so a simulated agent uses only information it legally
//! observes. Expectation terms inside the dynamics use the precomputed
//! deterministic mean-field curves, which keeps paths independent.
//!
//! Paths are embarrassingly parallel; per-path noise substreams make results
//! independent of thread scheduling, and reductions run in fixed path order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::cost::{
    centralized_follower_cost, centralized_leader_cost, CostEstimate, FollowerCostData,
    LeaderCostData, PathEnsemble, StatePath,
};
use crate::model::ModelSpec;
use crate::path::MatrixPath;
use crate::strategy::{FollowerGains, LeaderGains, MeanFieldTrajectories, StackelbergSolution};

pub mod checks;
pub mod perturb;
pub mod rng;

pub use checks::{filter_consistency_check, replay_filtered_adjoint, FilterCheckReport};
pub use perturb::{perturbation_cost_follower, perturbation_cost_leader, PerturbationOutcome};
pub use rng::{NoiseSource, RngStreams};

/// How the population coupling terms are fed into the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// The live empirical follower average (the finite-N system).
    Empirical,
    /// The deterministic limit curve (the limiting system).
    Limiting,
}

/// Additive strategy perturbation `eps * (affine(t) + feedback * xhat)`,
/// adapted to the perturbed agent's own filtration.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub eps: f64,
    pub affine: MatrixPath,
    pub feedback: DMatrix<f64>,
}

impl Perturbation {
    fn apply(&self, u: &mut DVector<f64>, k: usize, filtered: &DVector<f64>) {
        if self.eps != 0.0 {
            let dir = self.affine.at(k).column(0).into_owned() + &self.feedback * filtered;
            u.axpy(self.eps, &dir, 1.0);
        }
    }

    /// Deterministic direction mean given the mean of the filtered state.
    pub(crate) fn mean_direction(&self, k: usize, filtered_mean: &DVector<f64>) -> DVector<f64> {
        self.affine.at(k).column(0).into_owned() + &self.feedback * filtered_mean
    }
}

/// Everything the stepping loop reads about the announced strategies.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub follower_gains: FollowerGains,
    pub leader_gains: LeaderGains,
    pub means: MeanFieldTrajectories,
    /// Follower filter gain `sigma_bar + Pi H' (f')^{-1}` per node.
    pub kal_follower: MatrixPath,
    /// Leader filter gain `sigma0_bar + Pi0 H0' (f0')^{-1}` per node.
    pub kal_leader: MatrixPath,
    pub f_inv: MatrixPath,
    pub f0_inv: MatrixPath,
}

impl ClosedLoop {
    pub fn from_solution(spec: &ModelSpec, sol: &StackelbergSolution) -> Result<ClosedLoop> {
        let nodes = spec.grid.len();
        let mut kf = Vec::with_capacity(nodes);
        let mut kl = Vec::with_capacity(nodes);
        for k in 0..nodes {
            kf.push(
                spec.follower.sigma_bar.at(k)
                    + sol.bundle.pi.at(k)
                        * spec.follower.obs.h.at(k).transpose()
                        * sol.inverses.f_inv.at(k).transpose(),
            );
            kl.push(
                spec.leader.sigma_bar.at(k)
                    + sol.bundle.pi0.at(k)
                        * spec.leader.obs.h.at(k).transpose()
                        * sol.inverses.f0_inv.at(k).transpose(),
            );
        }
        Ok(ClosedLoop {
            follower_gains: sol.follower_gains.clone(),
            leader_gains: sol.leader_gains.clone(),
            means: sol.means.clone(),
            kal_follower: MatrixPath::new(kf)?,
            kal_leader: MatrixPath::new(kl)?,
            f_inv: sol.inverses.f_inv.clone(),
            f0_inv: sol.inverses.f0_inv.clone(),
        })
    }
}

/// Run configuration for one simulation call.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_agents: usize,
    pub paths: usize,
    pub seed: u64,
    pub coupling: Coupling,
    /// Follower whose trajectories and cost are recorded (0-based).
    pub record_agent: usize,
    /// Store all agents' trajectories at this node stride.
    pub store_stride: Option<usize>,
    /// Capture the recorded agent's observation/innovation increments.
    pub capture_increments: bool,
    pub follower_pert: Option<Perturbation>,
    pub leader_pert: Option<Perturbation>,
}

impl SimConfig {
    pub fn new(n_agents: usize, paths: usize, seed: u64) -> Self {
        SimConfig {
            n_agents,
            paths,
            seed,
            coupling: Coupling::Empirical,
            record_agent: 0,
            store_stride: None,
            capture_increments: false,
            follower_pert: None,
            leader_pert: None,
        }
    }
}

/// Full trajectories of every agent on the stored nodes of one path.
#[derive(Debug, Clone)]
pub struct FullTrajectories {
    /// Stored node indices (stride plus the final node).
    pub nodes: Vec<usize>,
    /// `x[agent][stored]`; agent 0 is the leader.
    pub x: Vec<Vec<DVector<f64>>>,
    pub x_hat: Vec<Vec<DVector<f64>>>,
    pub u: Vec<Vec<DVector<f64>>>,
    /// Cumulative observations.
    pub y: Vec<Vec<DVector<f64>>>,
    /// Follower state average at the stored nodes.
    pub x_avg: Vec<DVector<f64>>,
}

/// Observation and innovation increments of the recorded agent.
#[derive(Debug, Clone)]
pub struct IncrementCapture {
    pub dy: Vec<DVector<f64>>,
    pub innovations: Vec<DVector<f64>>,
}

/// Everything recorded about one simulated path.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub x0: StatePath,
    pub u0: StatePath,
    /// Limiting leader state driven by the same noise (gap diagnostics).
    pub x0_lim: StatePath,
    pub x_avg: StatePath,
    pub x_i: StatePath,
    pub u_i: StatePath,
    pub x_hat_i: StatePath,
    pub x0_check: StatePath,
    pub full: Option<FullTrajectories>,
    pub capture: Option<IncrementCapture>,
}

/// Aggregated output of [`simulate_population`].
#[derive(Debug)]
pub struct SimulationResult {
    pub n_agents: usize,
    pub paths: usize,
    pub seed: u64,
    /// N = 1 is allowed but sits outside the mean-field asymptotic regime.
    pub degenerate_population: bool,
    /// Centralized leader cost estimate.
    pub cost_leader: CostEstimate,
    /// Centralized cost estimate of the recorded follower.
    pub cost_follower: CostEstimate,
    /// Per node: mean over paths of `|x_avg - E x_i|^2`.
    pub gap_state_avg: Vec<f64>,
    /// Per node: mean over paths of `|x0 - x0_lim|^2`.
    pub gap_leader_state: Vec<f64>,
    pub sup_gap_state_avg: f64,
    pub sup_gap_leader: f64,
    /// Per node: mean over paths of the recorded agent's filter error.
    pub err_mean: Vec<DVector<f64>>,
    /// Per node: sample covariance of the recorded agent's filter error.
    pub err_cov: Vec<DMatrix<f64>>,
    /// Raw per-path records, in path order.
    pub records: Vec<PathRecord>,
}

pub(crate) struct NodeConstants {
    pub e_xi: Vec<DVector<f64>>,
    fol_state: Vec<DVector<f64>>,
    fol_filter: Vec<DVector<f64>>,
    fol_obs: Vec<DVector<f64>>,
    fol_pred: Vec<DVector<f64>>,
    u_det: Vec<DVector<f64>>,
    lead_state: Vec<DVector<f64>>,
    lead_lim: Vec<DVector<f64>>,
    lead_obs: Vec<DVector<f64>>,
    lead_pred: Vec<DVector<f64>>,
    u0_det: Vec<DVector<f64>>,
    l_state_head: Vec<DMatrix<f64>>,
}

pub(crate) fn node_constants(spec: &ModelSpec, cl: &ClosedLoop, coupling: Coupling) -> NodeConstants {
    let grid = &spec.grid;
    let dt = grid.dt();
    let n = spec.n;
    let nodes = grid.len();
    let limiting = coupling == Coupling::Limiting;

    let mut out = NodeConstants {
        e_xi: Vec::with_capacity(nodes),
        fol_state: Vec::with_capacity(nodes),
        fol_filter: Vec::with_capacity(nodes),
        fol_obs: Vec::with_capacity(nodes),
        fol_pred: Vec::with_capacity(nodes),
        u_det: Vec::with_capacity(nodes),
        lead_state: Vec::with_capacity(nodes),
        lead_lim: Vec::with_capacity(nodes),
        lead_obs: Vec::with_capacity(nodes),
        lead_pred: Vec::with_capacity(nodes),
        u0_det: Vec::with_capacity(nodes),
        l_state_head: Vec::with_capacity(nodes),
    };

    for k in 0..nodes {
        let e_xi = cl.means.e_xi.at(k).column(0).into_owned();
        let e_x0 = cl.means.e_x0.at(k).column(0).into_owned();
        let gamma = cl.means.gamma.at(k).column(0).into_owned();
        let fd = &spec.follower;
        let ld = &spec.leader;

        let mut fol_state =
            fd.a_bar.at(k) * &e_xi + fd.f_lead.at(k) * &e_x0 + fd.b_aff.at(k).column(0);
        if limiting {
            fol_state += fd.c.at(k) * &e_xi;
        }
        out.fol_state.push(fol_state * dt);
        out.fol_filter.push(
            ((fd.a_bar.at(k) + fd.c.at(k)) * &e_xi
                + fd.f_lead.at(k) * &e_x0
                + fd.b_aff.at(k).column(0))
                * dt,
        );
        let mut fol_obs = fd.obs.h_bar.at(k) * &e_xi + fd.obs.h_aff.at(k).column(0);
        if limiting {
            fol_obs += fd.obs.i_pop.at(k) * &e_xi;
        }
        out.fol_obs.push(fol_obs * dt);
        out.fol_pred.push(
            (fd.obs.h_bar.at(k) * &e_xi
                + fd.obs.i_pop.at(k) * &e_xi
                + fd.obs.h_aff.at(k).column(0))
                * dt,
        );
        out.u_det.push(
            cl.follower_gains.k_mean.at(k) * &e_xi
                + cl.follower_gains.k_leader.at(k) * &e_x0
                + cl.follower_gains.k_aff.at(k).column(0),
        );

        let mut lead_state = ld.a_bar.at(k) * &e_x0 + ld.b_aff.at(k).column(0);
        if limiting {
            lead_state += ld.c.at(k) * &e_xi;
        }
        out.lead_state.push(lead_state * dt);
        out.lead_lim
            .push((ld.a_bar.at(k) * &e_x0 + ld.c.at(k) * &e_xi + ld.b_aff.at(k).column(0)) * dt);
        let mut lead_obs = ld.obs.h_bar.at(k) * &e_x0 + ld.obs.h_aff.at(k).column(0);
        if limiting {
            lead_obs += ld.obs.i_pop.at(k) * &e_xi;
        }
        out.lead_obs.push(lead_obs * dt);
        out.lead_pred.push(
            (ld.obs.h_bar.at(k) * &e_x0
                + ld.obs.i_pop.at(k) * &e_xi
                + ld.obs.h_aff.at(k).column(0))
                * dt,
        );

        // u0 = L_state [x0_check; E x_i; gamma] + L_mean E[X] + L_aff, with
        // everything deterministic folded into one vector per node.
        let l_state = cl.leader_gains.l_state.at(k);
        let head = l_state.view((0, 0), (spec.k, n)).into_owned();
        let tail_xi = l_state.view((0, n), (spec.k, n)).into_owned();
        let tail_gamma = l_state.view((0, 2 * n), (spec.k, n)).into_owned();
        let u0_det = &tail_xi * &e_xi
            + &tail_gamma * &gamma
            + cl.leader_gains.l_mean.at(k) * cl.means.e_x0_aug.at(k).column(0)
            + cl.leader_gains.l_aff.at(k).column(0);
        out.u0_det.push(u0_det);
        out.l_state_head.push(head);
        out.e_xi.push(e_xi);
    }
    out
}

fn draw_noise(rng: &mut impl Rng, buf: &mut DVector<f64>, sqrt_dt: f64) {
    for v in buf.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = z * sqrt_dt;
    }
}

pub(crate) fn run_path(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    consts: &NodeConstants,
    cfg: &SimConfig,
    path: usize,
) -> PathRecord {
    let grid = &spec.grid;
    let n = spec.n;
    let kdim = spec.k;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let steps = grid.steps();
    let n_agents = cfg.n_agents;
    let limiting = cfg.coupling == Coupling::Limiting;
    let streams = RngStreams::new(cfg.seed);

    // Agent 0 is the leader, follower i is agent i + 1.
    let mut lead_w = streams.stream(path, 0, NoiseSource::State);
    let mut lead_wb = streams.stream(path, 0, NoiseSource::StateBar);
    let mut fol_w: Vec<_> =
        (0..n_agents).map(|i| streams.stream(path, i + 1, NoiseSource::State)).collect();
    let mut fol_wb: Vec<_> =
        (0..n_agents).map(|i| streams.stream(path, i + 1, NoiseSource::StateBar)).collect();

    let mut x0 = spec.leader.xi.clone();
    let mut x0_lim = spec.leader.xi.clone();
    let mut x0_check = spec.leader.xi.clone();
    let mut x: Vec<DVector<f64>> = vec![spec.follower.xi.clone(); n_agents];
    let mut x_hat: Vec<DVector<f64>> = vec![spec.follower.xi.clone(); n_agents];
    let mut y0 = DVector::zeros(n);
    let mut y: Vec<DVector<f64>> = vec![DVector::zeros(n); n_agents];

    let mut x_avg = DVector::zeros(n);
    let mut coupling = DVector::zeros(n);
    let mut u0 = DVector::zeros(kdim);
    let mut drift = DVector::zeros(n);
    let mut dy = DVector::zeros(n);
    let mut resid = DVector::zeros(n);
    let mut innov = DVector::zeros(n);
    let mut nw = DVector::zeros(n);
    let mut nwb = DVector::zeros(n);
    let mut us: Vec<DVector<f64>> = vec![DVector::zeros(kdim); n_agents];

    let nodes = steps + 1;
    let mut rec = PathRecord {
        x0: Vec::with_capacity(nodes),
        u0: Vec::with_capacity(nodes),
        x0_lim: Vec::with_capacity(nodes),
        x_avg: Vec::with_capacity(nodes),
        x_i: Vec::with_capacity(nodes),
        u_i: Vec::with_capacity(nodes),
        x_hat_i: Vec::with_capacity(nodes),
        x0_check: Vec::with_capacity(nodes),
        full: cfg.store_stride.map(|_| FullTrajectories {
            nodes: Vec::new(),
            x: vec![Vec::new(); n_agents + 1],
            x_hat: vec![Vec::new(); n_agents + 1],
            u: vec![Vec::new(); n_agents + 1],
            y: vec![Vec::new(); n_agents + 1],
            x_avg: Vec::new(),
        }),
        capture: cfg.capture_increments.then(|| IncrementCapture {
            dy: Vec::with_capacity(steps),
            innovations: Vec::with_capacity(steps),
        }),
    };

    for k in 0..=steps {
        x_avg.fill(0.0);
        for xi in &x {
            x_avg += xi;
        }
        x_avg /= n_agents as f64;
        if limiting {
            coupling.copy_from(&consts.e_xi[k]);
        } else {
            coupling.copy_from(&x_avg);
        }

        // Controls at node k.
        u0.copy_from(&consts.u0_det[k]);
        u0.gemv(1.0, &consts.l_state_head[k], &x0_check, 1.0);
        if let Some(p) = &cfg.leader_pert {
            p.apply(&mut u0, k, &x0_check);
        }
        for (i, ui) in us.iter_mut().enumerate() {
            ui.copy_from(&consts.u_det[k]);
            ui.gemv(1.0, cl.follower_gains.k_hat.at(k), &x_hat[i], 1.0);
            ui.neg_mut();
            if i == cfg.record_agent {
                if let Some(p) = &cfg.follower_pert {
                    p.apply(ui, k, &x_hat[i]);
                }
            }
        }

        rec.x0.push(x0.clone());
        rec.u0.push(u0.clone());
        rec.x0_lim.push(x0_lim.clone());
        rec.x_avg.push(x_avg.clone());
        rec.x_i.push(x[cfg.record_agent].clone());
        rec.u_i.push(us[cfg.record_agent].clone());
        rec.x_hat_i.push(x_hat[cfg.record_agent].clone());
        rec.x0_check.push(x0_check.clone());
        if let Some(full) = &mut rec.full {
            let stride = cfg.store_stride.unwrap_or(1).max(1);
            if k % stride == 0 || k == steps {
                full.nodes.push(k);
                full.x[0].push(x0.clone());
                full.x_hat[0].push(x0_check.clone());
                full.u[0].push(u0.clone());
                full.y[0].push(y0.clone());
                for i in 0..n_agents {
                    full.x[i + 1].push(x[i].clone());
                    full.x_hat[i + 1].push(x_hat[i].clone());
                    full.u[i + 1].push(us[i].clone());
                    full.y[i + 1].push(y[i].clone());
                }
                full.x_avg.push(x_avg.clone());
            }
        }

        if k == steps {
            break;
        }

        let ld = &spec.leader;
        let fd = &spec.follower;

        // Leader: observation, innovation, true state, limiting twin, filter.
        draw_noise(&mut lead_w, &mut nw, sqrt_dt);
        draw_noise(&mut lead_wb, &mut nwb, sqrt_dt);

        dy.copy_from(&consts.lead_obs[k]);
        dy.gemv(dt, ld.obs.h.at(k), &x0, 1.0);
        if !limiting {
            dy.gemv(dt, ld.obs.i_pop.at(k), &coupling, 1.0);
        }
        dy.gemv(1.0, ld.obs.f_noise.at(k), &nwb, 1.0);
        y0 += &dy;

        resid.copy_from(&dy);
        resid.axpy(-1.0, &consts.lead_pred[k], 1.0);
        resid.gemv(-dt, ld.obs.h.at(k), &x0_check, 1.0);
        innov.gemv(1.0, cl.f0_inv.at(k), &resid, 0.0);

        drift.copy_from(&consts.lead_state[k]);
        drift.gemv(dt, ld.a.at(k), &x0, 1.0);
        drift.gemv(dt, ld.b_ctrl.at(k), &u0, 1.0);
        if !limiting {
            drift.gemv(dt, ld.c.at(k), &coupling, 1.0);
        }
        drift.gemv(1.0, ld.sigma.at(k), &nw, 1.0);
        drift.gemv(1.0, ld.sigma_bar.at(k), &nwb, 1.0);
        x0 += &drift;

        drift.copy_from(&consts.lead_lim[k]);
        drift.gemv(dt, ld.a.at(k), &x0_lim, 1.0);
        drift.gemv(dt, ld.b_ctrl.at(k), &u0, 1.0);
        drift.gemv(1.0, ld.sigma.at(k), &nw, 1.0);
        drift.gemv(1.0, ld.sigma_bar.at(k), &nwb, 1.0);
        x0_lim += &drift;

        drift.copy_from(&consts.lead_lim[k]);
        drift.gemv(dt, ld.a.at(k), &x0_check, 1.0);
        drift.gemv(dt, ld.b_ctrl.at(k), &u0, 1.0);
        drift.gemv(1.0, cl.kal_leader.at(k), &innov, 1.0);
        x0_check += &drift;

        // Followers.
        for i in 0..n_agents {
            draw_noise(&mut fol_w[i], &mut nw, sqrt_dt);
            draw_noise(&mut fol_wb[i], &mut nwb, sqrt_dt);

            dy.copy_from(&consts.fol_obs[k]);
            dy.gemv(dt, fd.obs.h.at(k), &x[i], 1.0);
            if !limiting {
                dy.gemv(dt, fd.obs.i_pop.at(k), &coupling, 1.0);
            }
            dy.gemv(1.0, fd.obs.f_noise.at(k), &nwb, 1.0);
            y[i] += &dy;

            resid.copy_from(&dy);
            resid.axpy(-1.0, &consts.fol_pred[k], 1.0);
            resid.gemv(-dt, fd.obs.h.at(k), &x_hat[i], 1.0);
            innov.gemv(1.0, cl.f_inv.at(k), &resid, 0.0);

            if i == cfg.record_agent {
                if let Some(cap) = &mut rec.capture {
                    cap.dy.push(dy.clone());
                    cap.innovations.push(innov.clone());
                }
            }

            drift.copy_from(&consts.fol_state[k]);
            drift.gemv(dt, fd.a.at(k), &x[i], 1.0);
            drift.gemv(dt, fd.b_ctrl.at(k), &us[i], 1.0);
            if !limiting {
                drift.gemv(dt, fd.c.at(k), &coupling, 1.0);
            }
            drift.gemv(1.0, fd.sigma.at(k), &nw, 1.0);
            drift.gemv(1.0, fd.sigma_bar.at(k), &nwb, 1.0);
            x[i] += &drift;

            drift.copy_from(&consts.fol_filter[k]);
            drift.gemv(dt, fd.a.at(k), &x_hat[i], 1.0);
            drift.gemv(dt, fd.b_ctrl.at(k), &us[i], 1.0);
            drift.gemv(1.0, cl.kal_follower.at(k), &innov, 1.0);
            x_hat[i] += &drift;
        }
    }
    rec
}

/// Simulate the finite-N closed-loop population.
pub fn simulate_population(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    cfg: &SimConfig,
) -> Result<SimulationResult> {
    if cfg.n_agents == 0 {
        return Err(Error::invalid("population needs at least one follower"));
    }
    if cfg.paths < 2 {
        return Err(Error::invalid("need at least 2 paths for Monte Carlo estimates"));
    }
    if cfg.record_agent >= cfg.n_agents {
        return Err(Error::invalid("recorded agent index out of range"));
    }

    let consts = node_constants(spec, cl, cfg.coupling);
    let records: Vec<PathRecord> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| run_path(spec, cl, &consts, cfg, p))
        .collect();

    for (p, r) in records.iter().enumerate() {
        let finite = r.x0.iter().chain(r.x_i.iter()).all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::blow_up(format!("simulation path {p}"), spec.grid.t_end()));
        }
    }

    finalize(spec, cl, cfg, records)
}

fn finalize(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    cfg: &SimConfig,
    records: Vec<PathRecord>,
) -> Result<SimulationResult> {
    let nodes = spec.grid.len();
    let n = spec.n;
    let paths = records.len();

    let x0: PathEnsemble = records.iter().map(|r| r.x0.clone()).collect();
    let u0: PathEnsemble = records.iter().map(|r| r.u0.clone()).collect();
    let x_avg: PathEnsemble = records.iter().map(|r| r.x_avg.clone()).collect();
    let x_i: PathEnsemble = records.iter().map(|r| r.x_i.clone()).collect();
    let u_i: PathEnsemble = records.iter().map(|r| r.u_i.clone()).collect();

    let cost_leader =
        centralized_leader_cost(spec, &LeaderCostData { x0: &x0, u0: &u0, x_avg: &x_avg })?
            .with_batched_se(10);
    let cost_follower = centralized_follower_cost(
        spec,
        &FollowerCostData { x_i: &x_i, u_i: &u_i, x_avg: &x_avg, x0: &x0 },
    )?
    .with_batched_se(10);

    let mut gap_state_avg = vec![0.0; nodes];
    let mut gap_leader_state = vec![0.0; nodes];
    let mut err_mean = vec![DVector::zeros(n); nodes];
    let mut err_cov = vec![DMatrix::zeros(n, n); nodes];

    for r in &records {
        for k in 0..nodes {
            let e_xi = cl.means.e_xi.at(k).column(0);
            let d = &r.x_avg[k] - e_xi;
            gap_state_avg[k] += d.norm_squared();
            let dl = &r.x0[k] - &r.x0_lim[k];
            gap_leader_state[k] += dl.norm_squared();
            err_mean[k] += &r.x_i[k] - &r.x_hat_i[k];
        }
    }
    for k in 0..nodes {
        gap_state_avg[k] /= paths as f64;
        gap_leader_state[k] /= paths as f64;
        err_mean[k] /= paths as f64;
    }
    for r in &records {
        for k in 0..nodes {
            let err = &r.x_i[k] - &r.x_hat_i[k] - &err_mean[k];
            err_cov[k] += &err * err.transpose();
        }
    }
    for cov in &mut err_cov {
        *cov /= (paths - 1).max(1) as f64;
    }

    let sup_gap_state_avg = gap_state_avg.iter().cloned().fold(0.0, f64::max);
    let sup_gap_leader = gap_leader_state.iter().cloned().fold(0.0, f64::max);

    Ok(SimulationResult {
        n_agents: cfg.n_agents,
        paths,
        seed: cfg.seed,
        degenerate_population: cfg.n_agents < 2,
        cost_leader,
        cost_follower,
        gap_state_avg,
        gap_leader_state,
        sup_gap_state_avg,
        sup_gap_leader,
        err_mean,
        err_cov,
        records,
    })
}

/// Monte Carlo estimates of the limiting costs `(J0, J_i)` under the
/// decentralized strategies, with the population term frozen to its limit.
///
/// Expectation terms in the limiting functionals are the deterministic mean
/// curves, so with all noises zero the estimate collapses to an exact
/// quadrature (standard error zero).
pub fn limiting_costs(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    paths: usize,
    seed: u64,
) -> Result<(CostEstimate, CostEstimate)> {
    let mut cfg = SimConfig::new(1, paths, seed);
    cfg.coupling = Coupling::Limiting;
    let result = simulate_population(spec, cl, &cfg)?;
    limiting_costs_from(spec, cl, &result)
}

pub(crate) fn limiting_costs_from(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    result: &SimulationResult,
) -> Result<(CostEstimate, CostEstimate)> {
    let grid = &spec.grid;
    let nodes = grid.len();
    let lc = &spec.leader_cost;
    let fc = &spec.follower_cost;

    let mut leader_samples = Vec::with_capacity(result.records.len());
    let mut follower_samples = Vec::with_capacity(result.records.len());
    for r in &result.records {
        let mut acc0 = 0.0;
        let mut acc_i = 0.0;
        for k in 0..nodes {
            let e_xi = cl.means.e_xi.at(k).column(0).into_owned();
            let e_x0 = cl.means.e_x0.at(k).column(0).into_owned();
            let w = grid.quad_weight(k);

            let centered = &r.x0[k] - lc.gamma_pop.at(k) * &e_xi - lc.gamma_mean.at(k) * &e_x0;
            let v = &centered - lc.eta.at(k).column(0).into_owned();
            let u = &r.u0[k];
            acc0 += w
                * ((lc.q.at(k) * &v).dot(&v)
                    + (lc.r.at(k) * u).dot(u)
                    + 2.0 * (lc.s.at(k) * &centered).dot(u));

            let vi = &r.x_i[k]
                - fc.gamma_pop.at(k) * &e_xi
                - fc.gamma_mean.at(k) * &e_xi
                - fc.gamma_lead.at(k) * &r.x0[k]
                - fc.gamma_lead_mean.at(k) * &e_x0
                - fc.eta.at(k).column(0).into_owned();
            let ui = &r.u_i[k];
            let cross = fc.s.at(k) * (&r.x_i[k] - fc.gamma_mean.at(k) * &e_xi);
            acc_i += w
                * ((fc.q.at(k) * &vi).dot(&vi)
                    + (fc.r.at(k) * ui).dot(ui)
                    + 2.0 * cross.dot(ui));
        }
        let kt = nodes - 1;
        let e_xi_t = cl.means.e_xi.at(kt).column(0).into_owned();
        let e_x0_t = cl.means.e_x0.at(kt).column(0).into_owned();
        let w0 = &r.x0[kt]
            - &lc.terminal.gamma_pop * &e_xi_t
            - &lc.terminal.gamma_mean * &e_x0_t
            - &lc.terminal.eta;
        acc0 += (&lc.terminal.g * &w0).dot(&w0);
        let wi = &r.x_i[kt]
            - &fc.terminal.gamma_pop * &e_xi_t
            - &fc.terminal.gamma_mean * &e_xi_t
            - &fc.terminal.gamma_lead * &r.x0[kt]
            - &fc.terminal.gamma_lead_mean * &e_x0_t
            - &fc.terminal.eta;
        acc_i += (&fc.terminal.g * &wi).dot(&wi);

        leader_samples.push(0.5 * acc0);
        follower_samples.push(0.5 * acc_i);
    }
    Ok((
        CostEstimate::from_samples(leader_samples).with_batched_se(10),
        CostEstimate::from_samples(follower_samples).with_batched_se(10),
    ))
}
