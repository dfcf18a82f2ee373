//! Perturbed closed-loop simulation for the equilibrium margin checks.
//!
//! A follower deviation leaves every other strategy untouched: the deviating
//! agent simply applies `u* + eps * direction` while the rest of the
//! population keeps the announced feedback laws.
//!
//! A leader deviation makes the followers re-respond: their affine term and
//! the deterministic mean-field curves depend on the leader's mean control,
//! so the deterministic layer is re-solved for the perturbed announcement by
//! a small fixed-point iteration before simulating. Both runs share noise
//! streams (common random numbers), so cost differences are tightly paired.

use crate::error::{Error, Result};
use crate::filtersim::{
    simulate_population, ClosedLoop, Perturbation, SimConfig,
};
use crate::model::cost::CostEstimate;
use crate::model::ModelSpec;
use crate::path::MatrixPath;
use crate::solvers::solve_phi;
use crate::strategy::{solve_gamma, solve_mean_pair, MeanFieldTrajectories, StackelbergSolution};

/// Paired baseline/perturbed cost estimates under common random numbers.
#[derive(Debug, Clone)]
pub struct PerturbationOutcome {
    pub baseline: CostEstimate,
    pub perturbed: CostEstimate,
    /// Mean of the per-path difference `perturbed - baseline`.
    pub diff_mean: f64,
    /// Standard error of the paired difference.
    pub diff_se: f64,
}

fn paired(baseline: CostEstimate, perturbed: CostEstimate) -> PerturbationOutcome {
    let diffs: Vec<f64> = perturbed
        .per_path
        .iter()
        .zip(&baseline.per_path)
        .map(|(p, b)| p - b)
        .collect();
    let est = CostEstimate::from_samples(diffs).with_batched_se(10);
    PerturbationOutcome {
        baseline,
        perturbed,
        diff_mean: est.value,
        diff_se: est.std_error,
    }
}

/// Centralized cost of the recorded follower under `u* + eps * direction`,
/// with every other agent unchanged.
pub fn perturbation_cost_follower(
    spec: &ModelSpec,
    cl: &ClosedLoop,
    n_agents: usize,
    paths: usize,
    seed: u64,
    pert: &Perturbation,
) -> Result<PerturbationOutcome> {
    let base = simulate_population(spec, cl, &SimConfig::new(n_agents, paths, seed))?;
    let mut cfg = SimConfig::new(n_agents, paths, seed);
    cfg.follower_pert = Some(pert.clone());
    let perturbed = simulate_population(spec, cl, &cfg)?;
    Ok(paired(base.cost_follower, perturbed.cost_follower))
}

/// Re-solve the deterministic layer for a perturbed leader announcement.
///
/// The leader's mean control, the followers' affine term and the mean pair
/// are mutually coupled; the loop converges geometrically for the mild
/// couplings this crate targets and errors out if it does not.
pub fn perturbed_closed_loop(
    spec: &ModelSpec,
    sol: &StackelbergSolution,
    base: &ClosedLoop,
    pert: &Perturbation,
) -> Result<ClosedLoop> {
    let grid = &spec.grid;
    let nodes = grid.len();
    let n = spec.n;

    let mut ev0 = {
        let mut vals = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let base_mean = sol.means.eu0.at(k).column(0).into_owned();
            let dir = pert.mean_direction(k, &sol.means.e_x0.at(k).column(0).into_owned());
            vals.push(nalgebra::DMatrix::from_column_slice(
                spec.k,
                1,
                (base_mean + pert.eps * dir).as_slice(),
            ));
        }
        MatrixPath::new(vals)?
    };

    let mut phi = sol.bundle.phi.clone();
    let mut e_x0 = sol.means.e_x0.clone();
    let mut e_xi = sol.means.e_xi.clone();
    let mut gamma = sol.means.gamma.clone();
    let mut converged = false;
    for _ in 0..60 {
        phi = solve_phi(spec, &sol.derived, &sol.inverses, &sol.bundle.p2, &sol.bundle.p3, &ev0)?;
        let pair = solve_mean_pair(spec, &sol.inverses, &sol.bundle.p2, &sol.bundle.p3, &phi, &ev0)?;
        e_x0 = pair.0;
        e_xi = pair.1;
        gamma = solve_gamma(spec, &sol.aug, &sol.bundle.sigma2, &sol.bundle.psi, &e_x0, &e_xi)?;

        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        let mut next = Vec::with_capacity(nodes);
        for k in 0..nodes {
            let mut stacked = nalgebra::DVector::zeros(3 * n);
            stacked.rows_mut(0, n).copy_from(&e_x0.at(k).column(0));
            stacked.rows_mut(n, n).copy_from(&e_xi.at(k).column(0));
            stacked.rows_mut(2 * n, n).copy_from(&gamma.at(k).column(0));
            let mut u = (base.leader_gains.l_state.at(k) + base.leader_gains.l_mean.at(k))
                * &stacked
                + base.leader_gains.l_aff.at(k).column(0);
            u.axpy(pert.eps, &pert.mean_direction(k, &e_x0.at(k).column(0).into_owned()), 1.0);
            let new = nalgebra::DMatrix::from_column_slice(spec.k, 1, u.as_slice());
            worst = worst.max((&new - ev0.at(k)).amax());
            scale = scale.max(new.amax());
            next.push(new);
        }
        ev0 = MatrixPath::new(next)?;
        if worst <= 1e-11 * (1.0 + scale) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::non_solvable(
            "perturbed leader layer",
            "mean-control fixed point did not converge",
        ));
    }

    // Stack the perturbed means and rebuild the affine follower gain.
    let mut e_aug = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut m = nalgebra::DMatrix::zeros(3 * n, 1);
        m.view_mut((0, 0), (n, 1)).copy_from(e_x0.at(k));
        m.view_mut((n, 0), (n, 1)).copy_from(e_xi.at(k));
        m.view_mut((2 * n, 0), (n, 1)).copy_from(gamma.at(k));
        e_aug.push(m);
    }
    let mut k_aff = Vec::with_capacity(nodes);
    for k in 0..nodes {
        k_aff.push(
            sol.inverses.r_inv.at(k) * spec.follower.b_ctrl.at(k).transpose() * phi.at(k),
        );
    }
    let mut follower_gains = base.follower_gains.clone();
    follower_gains.k_aff = MatrixPath::new(k_aff)?;

    let means = MeanFieldTrajectories {
        e_x0_aug: MatrixPath::new(e_aug)?,
        e_x0,
        e_xi,
        eu0: ev0,
        gamma,
        phi,
    };
    Ok(ClosedLoop {
        follower_gains,
        leader_gains: base.leader_gains.clone(),
        means,
        kal_follower: base.kal_follower.clone(),
        kal_leader: base.kal_leader.clone(),
        f_inv: base.f_inv.clone(),
        f0_inv: base.f0_inv.clone(),
    })
}

/// Leader's centralized cost under `u0* + eps * direction` with the follower
/// population re-responding to the perturbed announcement.
pub fn perturbation_cost_leader(
    spec: &ModelSpec,
    sol: &StackelbergSolution,
    cl: &ClosedLoop,
    n_agents: usize,
    paths: usize,
    seed: u64,
    pert: &Perturbation,
) -> Result<PerturbationOutcome> {
    let base = simulate_population(spec, cl, &SimConfig::new(n_agents, paths, seed))?;
    let perturbed = if pert.eps == 0.0 {
        simulate_population(spec, cl, &SimConfig::new(n_agents, paths, seed))?
    } else {
        let cl_pert = perturbed_closed_loop(spec, sol, cl, pert)?;
        let mut cfg = SimConfig::new(n_agents, paths, seed);
        cfg.leader_pert = Some(pert.clone());
        simulate_population(spec, &cl_pert, &cfg)?
    };
    Ok(paired(base.cost_leader, perturbed.cost_leader))
}
