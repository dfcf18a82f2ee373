//! Print the deterministic sticky-price curves (inspection helper).

use mfstack_core::experiments::{build_sticky_model, StickyPriceParams};
use mfstack_core::solvers::SolverOptions;
use mfstack_core::strategy::solve_stackelberg;

fn main() {
    let params = StickyPriceParams { steps: 500, ..Default::default() };
    let spec = build_sticky_model(&params).unwrap();
    let sol = solve_stackelberg(&spec, &SolverOptions::default()).unwrap();
    println!("certificate pass: {}", sol.certificate.pass);
    println!("{:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "t", "E p_i", "E p0", "E q0", "phi", "gamma", "P1");
    let g = &spec.grid;
    for k in (0..g.len()).step_by(25) {
        println!(
            "{:>6.2} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            g.t(k),
            sol.means.e_xi.at(k)[(0, 0)],
            sol.means.e_x0.at(k)[(0, 0)],
            sol.means.eu0.at(k)[(0, 0)],
            sol.bundle.phi.at(k)[(0, 0)],
            sol.means.gamma.at(k)[(0, 0)],
            sol.bundle.p1.at(k)[(0, 0)],
        );
    }
    // follower control mean: u_i = -(k_hat xhat + k_mean e_xi + k_leader e_x0 + k_aff),
    // at the mean: xhat ~ e_xi.
    println!("{:>6} {:>10}", "t", "E q_i");
    for k in (0..g.len()).step_by(25) {
        let e_xi = sol.means.e_xi.at(k).column(0).into_owned();
        let e_x0 = sol.means.e_x0.at(k).column(0).into_owned();
        let u = sol.follower_gains.control(k, &e_xi, &e_xi, &e_x0);
        println!("{:>6.2} {:>10.4}", g.t(k), u[0]);
    }
}
