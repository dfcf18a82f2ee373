//! Command-line front end: config ingestion, pipeline orchestration and
//! artifact export.
//!
//! Every command is a deterministic function of (config, seed): outputs
//! carry no timestamps and floats are printed in shortest-roundtrip form.
//! Failures exit nonzero with a machine-readable category on stderr:
//! `validation` (3), `non-solvable` (4), `blow-up` (5), `io` (6),
//! `config` (7).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfstack_core::error::{Error, ErrorCategory};
use mfstack_core::experiments::{
    build_sticky_model, decay_sweep, epsilon_nash_check, sticky_demo, DecaySweepConfig,
    StickyPriceParams,
};
use mfstack_core::export;
use mfstack_core::filtersim::{simulate_population, ClosedLoop, SimConfig};
use mfstack_core::model::config::model_from_file_with;
use mfstack_core::model::ModelSpec;
use mfstack_core::plot::{LinePlot, Series};
use mfstack_core::solvers::SolverOptions;
use mfstack_core::strategy::{solve_stackelberg, StackelbergSolution};

#[derive(Parser)]
#[command(
    name = "mfstack",
    about = "Solver and simulator for partially observed mean-field Stackelberg games",
    version,
    propagate_version = true
)]
struct Cli {
    /// Worker threads for path-parallel simulation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the grid step count of the config.
    #[arg(long)]
    steps: Option<usize>,
    /// Certificate threshold for the coupled Riccati pair.
    #[arg(long, default_value_t = 1e-8)]
    threshold_cert: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati/filter layers and export the solution schedules.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Simulate the finite closed-loop population.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 50)]
        n_agents: usize,
        #[arg(long, default_value_t = 200)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Store full trajectories at this node stride (0 = do not store).
        #[arg(long, default_value_t = 0)]
        stride: usize,
    },
    /// Approximation-gap decay across population sizes.
    DecaySweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Comma-separated strictly increasing population sizes.
        #[arg(long, default_value = "8,16,32,64,128,256")]
        n_list: String,
        #[arg(long, default_value_t = 400)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Unilateral-deviation margins at the computed equilibrium.
    NashCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 64)]
        n_agents: usize,
        #[arg(long, default_value_t = 200)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        directions: usize,
        /// Deviation magnitude.
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Sticky-price product-planning demo (five figures + CSVs).
    StickyDemo {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 300)]
        n_agents: usize,
        #[arg(long, default_value_t = 2)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error[config]: could not size the thread pool: {e}");
            return ExitCode::from(7);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category().as_str());
            let code = match e.category() {
                ErrorCategory::Validation | ErrorCategory::Dimension => 3,
                ErrorCategory::NonSolvable => 4,
                ErrorCategory::BlowUp => 5,
                ErrorCategory::Io => 6,
                ErrorCategory::Config => 7,
            };
            ExitCode::from(code)
        }
    }
}

fn load(model: &ModelArgs) -> Result<(ModelSpec, StackelbergSolution), Error> {
    let spec = model_from_file_with(&model.config, model.steps)?;
    let sol = solve_stackelberg(&spec, &SolverOptions { cert_threshold: model.threshold_cert })?;
    Ok((spec, sol))
}

fn write_solution(spec: &ModelSpec, sol: &StackelbergSolution, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let g = &spec.grid;
    for (name, path) in [
        ("p1", &sol.bundle.p1),
        ("p2", &sol.bundle.p2),
        ("p3", &sol.bundle.p3),
        ("phi", &sol.bundle.phi),
        ("pi", &sol.bundle.pi),
        ("pi0", &sol.bundle.pi0),
        ("sigma1", &sol.bundle.sigma1),
        ("sigma2", &sol.bundle.sigma2),
        ("psi", &sol.bundle.psi),
        ("gain_follower_filtered", &sol.follower_gains.k_hat),
        ("gain_follower_mean", &sol.follower_gains.k_mean),
        ("gain_follower_leader", &sol.follower_gains.k_leader),
        ("gain_follower_affine", &sol.follower_gains.k_aff),
        ("gain_leader_state", &sol.leader_gains.l_state),
        ("gain_leader_mean", &sol.leader_gains.l_mean),
        ("gain_leader_affine", &sol.leader_gains.l_aff),
        ("mean_leader_state", &sol.means.e_x0),
        ("mean_follower_state", &sol.means.e_xi),
        ("mean_leader_control", &sol.means.eu0),
        ("mean_stacked_state", &sol.means.e_x0_aug),
    ] {
        export::write_matrix_path_csv(&dir.join(format!("{name}.csv")), g, path)?;
    }

    let sv: Vec<f64> = sol.certificate.min_singular_value.clone();
    export::write_series_csv(&dir.join("certificate.csv"), g, &[("min_singular_value", &sv)])?;
    let worst = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    std::fs::write(
        dir.join("certificate.txt"),
        format!(
            "pass: {}\nthreshold: {}\nmin singular value over grid: {}\n",
            sol.certificate.pass, sol.certificate.threshold, worst
        ),
    )?;
    Ok(())
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Solve { model, out } => {
            let (spec, sol) = load(&model)?;
            write_solution(&spec, &sol, &out.out_dir)?;
            println!(
                "solved; certificate pass = {}; artifacts in {}",
                sol.certificate.pass,
                out.out_dir.display()
            );
            Ok(())
        }
        Command::Simulate { model, out, n_agents, paths, seed, stride } => {
            let (spec, sol) = load(&model)?;
            let cl = ClosedLoop::from_solution(&spec, &sol)?;
            let mut cfg = SimConfig::new(n_agents, paths, seed);
            if stride > 0 {
                cfg.store_stride = Some(stride);
            }
            let result = simulate_population(&spec, &cl, &cfg)?;
            std::fs::create_dir_all(&out.out_dir)?;

            let mut summary = String::new();
            use std::fmt::Write as _;
            let _ = writeln!(summary, "simulation: N = {n_agents}, paths = {paths}, seed = {seed}");
            if result.degenerate_population {
                let _ = writeln!(summary, "note: N = 1 is outside the mean-field asymptotic regime");
            }
            let _ = writeln!(
                summary,
                "leader cost    = {:.10} (se {:.4e})",
                result.cost_leader.value, result.cost_leader.std_error
            );
            let _ = writeln!(
                summary,
                "follower cost  = {:.10} (se {:.4e})",
                result.cost_follower.value, result.cost_follower.std_error
            );
            let _ = writeln!(summary, "sup_t E|x_avg - E x_i|^2 = {:.6e}", result.sup_gap_state_avg);
            let _ = writeln!(summary, "sup_t E|x0 - x0_lim|^2   = {:.6e}", result.sup_gap_leader);
            std::fs::write(out.out_dir.join("summary.txt"), &summary)?;

            export::write_series_csv(
                &out.out_dir.join("gaps.csv"),
                &spec.grid,
                &[
                    ("state_avg_mse", &result.gap_state_avg),
                    ("leader_state_mse", &result.gap_leader_state),
                ],
            )?;

            if stride > 0 {
                let mut csv = export::trajectory_header(spec.n, spec.k);
                for (p, rec) in result.records.iter().enumerate() {
                    let full = rec.full.as_ref().expect("stride was set");
                    for (si, &node) in full.nodes.iter().enumerate() {
                        for agent in 0..=n_agents {
                            export::push_trajectory_row(
                                &mut csv,
                                &export::TrajectoryRow {
                                    t: spec.grid.t(node),
                                    path: p,
                                    agent,
                                    x: full.x[agent][si].as_slice(),
                                    x_hat: full.x_hat[agent][si].as_slice(),
                                    u: full.u[agent][si].as_slice(),
                                    y: full.y[agent][si].as_slice(),
                                },
                            );
                        }
                    }
                }
                std::fs::write(out.out_dir.join("trajectories.csv"), csv)?;
            }
            print!("{summary}");
            Ok(())
        }
        Command::DecaySweep { model, out, n_list, paths, seed } => {
            let (spec, sol) = load(&model)?;
            let n_list: Vec<usize> = n_list
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::config("bad --n-list entry")))
                .collect::<Result<_, _>>()?;
            let report = decay_sweep(&spec, &sol, &DecaySweepConfig { n_list, paths, seed })?;
            std::fs::create_dir_all(&out.out_dir)?;
            let text = report.render_text();
            std::fs::write(out.out_dir.join("decay_report.txt"), &text)?;

            let mut csv = String::from("n,state_avg_mse,leader_state_mse,cost_gap_follower,cost_gap_leader\n");
            for p in &report.points {
                use std::fmt::Write as _;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    p.n_agents, p.gap_state_avg, p.gap_leader_state, p.cost_gap_follower, p.cost_gap_leader
                );
            }
            std::fs::write(out.out_dir.join("decay.csv"), csv)?;

            let mut plot = LinePlot::new("Approximation gaps vs population size", "N", "gap");
            plot.log_log = true;
            let pts = |f: &dyn Fn(&mfstack_core::experiments::DecayPoint) -> f64| {
                report
                    .points
                    .iter()
                    .filter(|p| p.failure.is_none())
                    .map(|p| (p.n_agents as f64, f(p)))
                    .collect::<Vec<_>>()
            };
            plot.push(Series::new("sup E|x_avg - E x_i|^2", pts(&|p| p.gap_state_avg)));
            plot.push(Series::new("sup E|x0 - x0_lim|^2", pts(&|p| p.gap_leader_state)).color(1));
            plot.push(Series::new("|J_i - J_i lim|", pts(&|p| p.cost_gap_follower)).color(2));
            plot.push(Series::new("|J0 - J0 lim|", pts(&|p| p.cost_gap_leader)).color(3));
            plot.write_svg(&out.out_dir.join("decay.svg"))?;

            print!("{text}");
            Ok(())
        }
        Command::NashCheck { model, out, n_agents, paths, seed, directions, eps } => {
            let (spec, sol) = load(&model)?;
            let report = epsilon_nash_check(&spec, &sol, n_agents, paths, seed, directions, eps)?;
            std::fs::create_dir_all(&out.out_dir)?;
            let text = report.render_text();
            std::fs::write(out.out_dir.join("margins.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
        Command::StickyDemo { out, n_agents, paths, seed, steps } => {
            let params = StickyPriceParams { n_agents, steps, ..Default::default() };
            // Validate eagerly so bad parameters surface as validation, not IO.
            build_sticky_model(&params)?;
            let report = sticky_demo(&params, paths, seed, &out.out_dir)?;
            println!(
                "sticky demo complete: {} files, initial prices ({}, {}), sup price gap {:.4e}",
                report.files.len(),
                report.initial_local_price,
                report.initial_leader_price,
                report.sup_price_gap
            );
            Ok(())
        }
    }
}
