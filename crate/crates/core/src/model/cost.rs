//! Monte Carlo evaluation of the finite-population cost functionals.
//!
//! Expectations are estimated by sample means over an ensemble of simulated
//! paths and the time integral by trapezoidal quadrature on the model grid.
//! Both choices match the Euler order of the simulator; standard errors are
//! reported alongside every estimate.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// One realization sampled at every grid node.
pub type StatePath = Vec<DVector<f64>>;
/// Independent realizations of one process, `[path][node]`.
pub type PathEnsemble = Vec<StatePath>;

/// Monte Carlo estimate with its standard error and per-path samples.
#[derive(Debug, Clone)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
    pub per_path: Vec<f64>,
}

impl CostEstimate {
    pub fn from_samples(per_path: Vec<f64>) -> CostEstimate {
        let p = per_path.len() as f64;
        let value = per_path.iter().sum::<f64>() / p;
        let var = per_path.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (p - 1.0).max(1.0);
        CostEstimate {
            value,
            std_error: (var / p).sqrt(),
            per_path,
        }
    }

    /// Replace the standard error by one computed from `batches` contiguous
    /// path batches; robust to the weak cross-path dependence introduced by
    /// the plug-in sample means inside the integrand.
    pub fn with_batched_se(mut self, batches: usize) -> CostEstimate {
        let p = self.per_path.len();
        if batches >= 2 && p >= 2 * batches {
            let size = p / batches;
            let mut means = Vec::with_capacity(batches);
            for b in 0..batches {
                let lo = b * size;
                let hi = if b + 1 == batches { p } else { lo + size };
                means.push(self.per_path[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
            }
            let grand = means.iter().sum::<f64>() / batches as f64;
            let var =
                means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
            self.std_error = (var / batches as f64).sqrt();
        }
        self
    }
}

/// Everything the i-th follower's cost functional reads.
pub struct FollowerCostData<'a> {
    pub x_i: &'a [StatePath],
    pub u_i: &'a [StatePath],
    /// Follower state average of the simulated population.
    pub x_avg: &'a [StatePath],
    pub x0: &'a [StatePath],
}

/// Everything the leader's cost functional reads.
pub struct LeaderCostData<'a> {
    pub x0: &'a [StatePath],
    pub u0: &'a [StatePath],
    pub x_avg: &'a [StatePath],
}

/// Full-population trajectories, `followers_x[agent][path][node]`.
pub struct PopulationTrajectories {
    pub x0: PathEnsemble,
    pub u0: PathEnsemble,
    pub followers_x: Vec<PathEnsemble>,
    pub followers_u: Vec<PathEnsemble>,
}

impl PopulationTrajectories {
    /// Empirical follower average `x_avg = (1/N) sum_i x_i`, per path and node.
    pub fn state_average(&self) -> PathEnsemble {
        let n_agents = self.followers_x.len();
        let paths = self.followers_x[0].len();
        let nodes = self.followers_x[0][0].len();
        let dim = self.followers_x[0][0][0].len();
        let mut avg = vec![vec![DVector::zeros(dim); nodes]; paths];
        for ens in &self.followers_x {
            for (p, path) in ens.iter().enumerate() {
                for (k, x) in path.iter().enumerate() {
                    avg[p][k] += x;
                }
            }
        }
        let scale = 1.0 / n_agents as f64;
        for path in &mut avg {
            for x in path {
                *x *= scale;
            }
        }
        avg
    }
}

fn check_ensemble(spec: &ModelSpec, name: &str, ens: &[StatePath], dim: usize) -> Result<()> {
    if ens.len() < 2 {
        return Err(Error::invalid(format!(
            "{name}: need at least 2 paths for a sample mean, got {}",
            ens.len()
        )));
    }
    for (p, path) in ens.iter().enumerate() {
        if path.len() != spec.grid.len() {
            return Err(Error::invalid(format!(
                "{name}: path {p} has {} nodes, grid has {}",
                path.len(),
                spec.grid.len()
            )));
        }
        if path.iter().any(|v| v.len() != dim) {
            return Err(Error::dimension(format!("{name}: path {p} has wrong state dimension")));
        }
    }
    Ok(())
}

fn ensemble_mean(ens: &[StatePath], node: usize) -> DVector<f64> {
    let mut m = DVector::zeros(ens[0][node].len());
    for path in ens {
        m += &path[node];
    }
    m / ens.len() as f64
}

/// Monte Carlo estimate of the i-th follower's centralized cost.
pub fn centralized_follower_cost(spec: &ModelSpec, data: &FollowerCostData) -> Result<CostEstimate> {
    check_ensemble(spec, "x_i", data.x_i, spec.n)?;
    check_ensemble(spec, "u_i", data.u_i, spec.k)?;
    check_ensemble(spec, "x_avg", data.x_avg, spec.n)?;
    check_ensemble(spec, "x0", data.x0, spec.n)?;
    let paths = data.x_i.len();
    if data.u_i.len() != paths || data.x_avg.len() != paths || data.x0.len() != paths {
        return Err(Error::invalid("follower cost: ensembles disagree on path count"));
    }

    let fc = &spec.follower_cost;
    let grid = &spec.grid;
    let nodes = grid.len();

    let mean_xi: Vec<DVector<f64>> = (0..nodes).map(|k| ensemble_mean(data.x_i, k)).collect();
    let mean_x0: Vec<DVector<f64>> = (0..nodes).map(|k| ensemble_mean(data.x0, k)).collect();

    let mut per_path = Vec::with_capacity(paths);
    for p in 0..paths {
        let mut acc = 0.0;
        for k in 0..nodes {
            let v = &data.x_i[p][k]
                - fc.gamma_pop.at(k) * &data.x_avg[p][k]
                - fc.gamma_mean.at(k) * &mean_xi[k]
                - fc.gamma_lead.at(k) * &data.x0[p][k]
                - fc.gamma_lead_mean.at(k) * &mean_x0[k]
                - fc.eta.at(k).column(0);
            let u = &data.u_i[p][k];
            let cross = fc.s.at(k) * (&data.x_i[p][k] - fc.gamma_mean.at(k) * &mean_xi[k]);
            let integrand =
                (fc.q.at(k) * &v).dot(&v) + (fc.r.at(k) * u).dot(u) + 2.0 * cross.dot(u);
            acc += grid.quad_weight(k) * integrand;
        }
        let kt = nodes - 1;
        let w = &data.x_i[p][kt]
            - &fc.terminal.gamma_pop * &data.x_avg[p][kt]
            - &fc.terminal.gamma_mean * &mean_xi[kt]
            - &fc.terminal.gamma_lead * &data.x0[p][kt]
            - &fc.terminal.gamma_lead_mean * &mean_x0[kt]
            - &fc.terminal.eta;
        acc += (&fc.terminal.g * &w).dot(&w);
        per_path.push(0.5 * acc);
    }
    Ok(CostEstimate::from_samples(per_path))
}

/// Monte Carlo estimate of the leader's centralized cost.
pub fn centralized_leader_cost(spec: &ModelSpec, data: &LeaderCostData) -> Result<CostEstimate> {
    check_ensemble(spec, "x0", data.x0, spec.n)?;
    check_ensemble(spec, "u0", data.u0, spec.k)?;
    check_ensemble(spec, "x_avg", data.x_avg, spec.n)?;
    let paths = data.x0.len();
    if data.u0.len() != paths || data.x_avg.len() != paths {
        return Err(Error::invalid("leader cost: ensembles disagree on path count"));
    }

    let lc = &spec.leader_cost;
    let grid = &spec.grid;
    let nodes = grid.len();
    let mean_x0: Vec<DVector<f64>> = (0..nodes).map(|k| ensemble_mean(data.x0, k)).collect();

    let mut per_path = Vec::with_capacity(paths);
    for p in 0..paths {
        let mut acc = 0.0;
        for k in 0..nodes {
            let centered = &data.x0[p][k]
                - lc.gamma_pop.at(k) * &data.x_avg[p][k]
                - lc.gamma_mean.at(k) * &mean_x0[k];
            let v = &centered - lc.eta.at(k).column(0);
            let u = &data.u0[p][k];
            let cross = lc.s.at(k) * &centered;
            let integrand =
                (lc.q.at(k) * &v).dot(&v) + (lc.r.at(k) * u).dot(u) + 2.0 * cross.dot(u);
            acc += grid.quad_weight(k) * integrand;
        }
        let kt = nodes - 1;
        let w = &data.x0[p][kt]
            - &lc.terminal.gamma_pop * &data.x_avg[p][kt]
            - &lc.terminal.gamma_mean * &mean_x0[kt]
            - &lc.terminal.eta;
        acc += (&lc.terminal.g * &w).dot(&w);
        per_path.push(0.5 * acc);
    }
    Ok(CostEstimate::from_samples(per_path))
}

/// Follower cost evaluated from explicit full-population trajectories.
pub fn centralized_follower_cost_from_population(
    spec: &ModelSpec,
    traj: &PopulationTrajectories,
    agent: usize,
) -> Result<CostEstimate> {
    if agent >= traj.followers_x.len() {
        return Err(Error::invalid(format!("agent index {agent} out of range")));
    }
    let x_avg = traj.state_average();
    centralized_follower_cost(
        spec,
        &FollowerCostData {
            x_i: &traj.followers_x[agent],
            u_i: &traj.followers_u[agent],
            x_avg: &x_avg,
            x0: &traj.x0,
        },
    )
}

/// Leader cost evaluated from explicit full-population trajectories.
pub fn centralized_leader_cost_from_population(
    spec: &ModelSpec,
    traj: &PopulationTrajectories,
) -> Result<CostEstimate> {
    let x_avg = traj.state_average();
    centralized_leader_cost(
        spec,
        &LeaderCostData {
            x0: &traj.x0,
            u0: &traj.u0,
            x_avg: &x_avg,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarModel;

    fn const_path(nodes: usize, v: f64) -> StatePath {
        vec![DVector::from_element(1, v); nodes]
    }

    fn dup(path: StatePath) -> PathEnsemble {
        vec![path.clone(), path]
    }

    #[test]
    fn zero_inputs_give_zero_cost() {
        let spec = ScalarModel {
            q: 2.0,
            q0: 3.0,
            g: 1.0,
            g0: 1.0,
            s: 0.5,
            s0: 0.5,
            ..Default::default()
        }
        .build();
        let nodes = spec.grid.len();
        let z = dup(const_path(nodes, 0.0));
        let jf = centralized_follower_cost(
            &spec,
            &FollowerCostData { x_i: &z, u_i: &z, x_avg: &z, x0: &z },
        )
        .unwrap();
        assert_eq!(jf.value, 0.0);
        let jl =
            centralized_leader_cost(&spec, &LeaderCostData { x0: &z, u0: &z, x_avg: &z }).unwrap();
        assert_eq!(jl.value, 0.0);
        assert_eq!(jl.std_error, 0.0);
    }

    #[test]
    fn follower_cost_hand_integration() {
        // x_i = 1, x0 = 0, Q = 2, everything else zero, T = 1: J = 1/2 * int 2 dt = 1.
        let spec = ScalarModel {
            q: 2.0,
            t_end: 1.0,
            ..Default::default()
        }
        .build();
        let nodes = spec.grid.len();
        let ones = dup(const_path(nodes, 1.0));
        let zeros = dup(const_path(nodes, 0.0));
        let j = centralized_follower_cost(
            &spec,
            &FollowerCostData { x_i: &ones, u_i: &zeros, x_avg: &ones, x0: &zeros },
        )
        .unwrap();
        assert!((j.value - 1.0).abs() < 1e-12, "J = {}", j.value);
    }

    #[test]
    fn leader_cost_cross_term_hand_integration() {
        // x0 = u0 = 1, S0 = 1, all quadratic weights zero, T = 1:
        // J = 1/2 * int 2 * <S0 x0, u0> dt = 1.
        let spec = ScalarModel {
            s0: 1.0,
            r0: 0.0,
            t_end: 1.0,
            ..Default::default()
        }
        .build();
        let nodes = spec.grid.len();
        let ones = dup(const_path(nodes, 1.0));
        let j = centralized_leader_cost(
            &spec,
            &LeaderCostData { x0: &ones, u0: &ones, x_avg: &ones },
        )
        .unwrap();
        assert!((j.value - 1.0).abs() < 1e-12, "J = {}", j.value);
    }

    #[test]
    fn leader_cost_is_homogeneous_in_the_weights() {
        let base = ScalarModel {
            q0: 1.3,
            r0: 0.7,
            s0: 0.4,
            g0: 0.9,
            eta0: 0.5,
            t_end: 1.0,
            ..Default::default()
        };
        let spec = base.build();
        let scaled = ScalarModel {
            q0: 3.0 * base.q0,
            r0: 3.0 * base.r0,
            s0: 3.0 * base.s0,
            g0: 3.0 * base.g0,
            ..base
        }
        .build();

        let nodes = spec.grid.len();
        let mk = |seed: f64| -> StatePath {
            (0..nodes).map(|k| DVector::from_element(1, (seed + k as f64 * 0.01).sin())).collect()
        };
        let x0 = vec![mk(0.3), mk(1.7)];
        let u0 = vec![mk(0.9), mk(2.1)];
        let xavg = vec![mk(0.1), mk(0.5)];

        let j1 = centralized_leader_cost(&spec, &LeaderCostData { x0: &x0, u0: &u0, x_avg: &xavg })
            .unwrap();
        let j3 =
            centralized_leader_cost(&scaled, &LeaderCostData { x0: &x0, u0: &u0, x_avg: &xavg })
                .unwrap();
        assert!(
            (j3.value - 3.0 * j1.value).abs() <= 1e-12 * (1.0 + j1.value.abs()),
            "{} vs {}",
            j3.value,
            3.0 * j1.value
        );
    }

    #[test]
    fn single_path_is_rejected() {
        let spec = ScalarModel::default().build();
        let nodes = spec.grid.len();
        let one = vec![const_path(nodes, 0.0)];
        let err = centralized_leader_cost(
            &spec,
            &LeaderCostData { x0: &one, u0: &one, x_avg: &one },
        );
        assert!(err.is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let spec = ScalarModel::default().build();
        let bad = dup(const_path(3, 0.0));
        let err = centralized_leader_cost(
            &spec,
            &LeaderCostData { x0: &bad, u0: &bad, x_avg: &bad },
        );
        assert!(err.is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn path_strategy(nodes: usize) -> impl Strategy<Value = StatePath> {
            proptest::collection::vec(-3.0f64..3.0, nodes)
                .prop_map(|vs| vs.into_iter().map(|v| DVector::from_element(1, v)).collect())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            // With PSD weights, no targets and no cross terms, both cost
            // functionals are nonnegative up to quadrature roundoff.
            #[test]
            fn costs_are_nonnegative_under_convex_weights(
                q in 0.0f64..3.0,
                r in 0.1f64..3.0,
                g in 0.0f64..2.0,
                gamma in -1.0f64..1.0,
                x in path_strategy(11),
                u in path_strategy(11),
                xa in path_strategy(11),
            ) {
                let spec = ScalarModel {
                    q,
                    r,
                    g,
                    q0: q,
                    r0: r,
                    g0: g,
                    gamma2_pop: gamma,
                    gamma0_pop: gamma,
                    t_end: 1.0,
                    steps: 10,
                    ..Default::default()
                }
                .build();
                let ens_x = vec![x.clone(), xa.clone()];
                let ens_u = vec![u.clone(), u.clone()];
                let ens_a = vec![xa.clone(), x.clone()];
                let zeros = vec![vec![DVector::zeros(1); 11]; 2];
                let jf = centralized_follower_cost(
                    &spec,
                    &FollowerCostData { x_i: &ens_x, u_i: &ens_u, x_avg: &ens_a, x0: &zeros },
                )
                .unwrap();
                prop_assert!(jf.value >= -1e-12, "follower cost {}", jf.value);
                let jl = centralized_leader_cost(
                    &spec,
                    &LeaderCostData { x0: &ens_x, u0: &ens_u, x_avg: &ens_a },
                )
                .unwrap();
                prop_assert!(jl.value >= -1e-12, "leader cost {}", jl.value);
            }

            // Scaling every weight of one cost by lambda scales its value by
            // lambda, for any fixed trajectories.
            #[test]
            fn follower_cost_is_positively_homogeneous(
                lambda in 0.1f64..5.0,
                x in path_strategy(11),
                u in path_strategy(11),
                xa in path_strategy(11),
                x0 in path_strategy(11),
            ) {
                let base = ScalarModel {
                    q: 1.3,
                    r: 0.6,
                    s: 0.3,
                    g: 0.8,
                    eta2: 0.4,
                    gamma2_pop: 0.5,
                    gamma3_lead: 0.4,
                    t_end: 1.0,
                    steps: 10,
                    ..Default::default()
                };
                let scaled = ScalarModel {
                    q: lambda * base.q,
                    r: lambda * base.r,
                    s: lambda * base.s,
                    g: lambda * base.g,
                    ..base
                };
                let ens = |p: &StatePath| vec![p.clone(), p.clone()];
                let data_x = ens(&x);
                let data_u = ens(&u);
                let data_a = ens(&xa);
                let data_0 = ens(&x0);
                let j1 = centralized_follower_cost(
                    &base.build(),
                    &FollowerCostData { x_i: &data_x, u_i: &data_u, x_avg: &data_a, x0: &data_0 },
                )
                .unwrap();
                let j2 = centralized_follower_cost(
                    &scaled.build(),
                    &FollowerCostData { x_i: &data_x, u_i: &data_u, x_avg: &data_a, x0: &data_0 },
                )
                .unwrap();
                prop_assert!(
                    (j2.value - lambda * j1.value).abs() <= 1e-10 * (1.0 + j1.value.abs() * lambda),
                    "{} vs {}",
                    j2.value,
                    lambda * j1.value
                );
            }
        }
    }

    #[test]
    fn population_average_matches_by_hand() {
        let spec = ScalarModel::default().build();
        let nodes = spec.grid.len();
        let traj = PopulationTrajectories {
            x0: dup(const_path(nodes, 0.0)),
            u0: dup(const_path(nodes, 0.0)),
            followers_x: vec![dup(const_path(nodes, 1.0)), dup(const_path(nodes, 3.0))],
            followers_u: vec![dup(const_path(nodes, 0.0)), dup(const_path(nodes, 0.0))],
        };
        let avg = traj.state_average();
        assert_eq!(avg[0][0][0], 2.0);
        assert_eq!(avg[1][nodes - 1][0], 2.0);
    }
}
