use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use overlapsim_cli::{generate_to, run, RunConfig, SceneKind, TransportKind, WorkerServer};
use overlapsim_core::coordinator::BalanceMetric;
use overlapsim_core::transport::DEFAULT_PORT;

#[derive(Parser)]
#[command(name = "overlapsim", version, about = "Distributed rigid-body simulation with overlapping partitions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Bodies,
    Contacts,
}

#[derive(Subcommand)]
enum Command {
    /// Run a coordinator over in-process threads or remote workers.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Defaults to the scene's worker count, or the number of --worker-addr values.
        #[arg(long)]
        workers: Option<u32>,
        #[arg(long, default_value_t = 0)]
        gamma: usize,
        #[arg(long, default_value_t = 2)]
        beta: usize,
        /// Timestep override in seconds.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long, value_enum, default_value_t = TransportKind::Inproc)]
        transport: TransportKind,
        /// host:port of a worker; repeat once per worker, in worker order.
        #[arg(long = "worker-addr")]
        worker_addr: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        solver_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        solver_tol: f64,
        /// Recorded in report.json. Runs are deterministic; scene randomness comes from `generate --seed`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Bodies)]
        balance_metric: Metric,
        /// Recompute all blend weights every step.
        #[arg(long)]
        full_weight_recompute: bool,
        /// Disable body sharing and load balancing.
        #[arg(long)]
        no_sharing: bool,
        /// Relabel bodies into spatial slabs for --workers.
        #[arg(long)]
        repartition: bool,
        /// Seconds to wait for all workers at the step barrier.
        #[arg(long, default_value_t = 30.0)]
        barrier_timeout: f64,
        /// Skip writing trajectory.bin.
        #[arg(long)]
        no_trajectory: bool,
    },
    /// Serve one coordinator over TCP.
    Worker {
        #[arg(long, default_value_t = format!("0.0.0.0:{DEFAULT_PORT}"))]
        listen: String,
    },
    /// Write a benchmark scene as JSON.
    Generate {
        #[command(subcommand)]
        kind: GenKind,
        #[arg(long, global = true, default_value_t = 2)]
        workers: u32,
        #[arg(long, global = true, default_value_t = 0)]
        seed: u64,
        #[arg(long, short, global = true, default_value = "scene.json")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenKind {
    /// Hanging chain of ball-jointed links.
    Chain {
        #[arg(long, default_value_t = 50)]
        links: usize,
    },
    /// Suspended plank bridge between two posts.
    Bridge {
        #[arg(long, default_value_t = 30)]
        planks: usize,
    },
    /// Spheres dropped into a bowl.
    Bowl {
        #[arg(long, default_value_t = 300)]
        spheres: usize,
    },
    /// Grid of pillars hit by projectiles.
    Building {
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 6)]
        cols: usize,
        #[arg(long, default_value_t = 4)]
        projectiles: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVERLAPSIM_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scene,
            workers,
            gamma,
            beta,
            dt,
            steps,
            transport,
            worker_addr,
            solver_iters,
            solver_tol,
            seed,
            out_dir,
            balance_metric,
            full_weight_recompute,
            no_sharing,
            repartition,
            barrier_timeout,
            no_trajectory,
        } => {
            let config = RunConfig {
                scene,
                workers,
                gamma,
                beta,
                timestep: dt,
                steps,
                transport,
                worker_addrs: worker_addr,
                solver_iters,
                solver_tol,
                seed,
                out_dir,
                balance_metric: match balance_metric {
                    Metric::Bodies => BalanceMetric::Bodies,
                    Metric::Contacts => BalanceMetric::Contacts,
                },
                full_weight_recompute,
                no_sharing,
                repartition,
                barrier_timeout_s: barrier_timeout,
                write_trajectory: !no_trajectory,
            };
            run(&config).map(|report| {
                let last = report.frames.last();
                println!(
                    "{} steps, {} workers, final contacts {}, max joint violation {:.3e}, outputs in {}",
                    report.frames.len(),
                    report.num_workers,
                    last.map_or(0, |f| f.total_contacts),
                    report.frames.iter().map(|f| f.joint_violation_max_rel).fold(0.0, f64::max),
                    config.out_dir.display()
                );
            })
        }
        Command::Worker { listen } => WorkerServer::bind(&listen).and_then(|server| {
            // tests and scripts read the bound port from this line
            println!("listening on {}", server.local_addr());
            server.serve()
        }),
        Command::Generate { kind, workers, seed, out } => {
            let kind = match kind {
                GenKind::Chain { links } => SceneKind::Chain { links },
                GenKind::Bridge { planks } => SceneKind::Bridge { planks },
                GenKind::Bowl { spheres } => SceneKind::Bowl { spheres },
                GenKind::Building { rows, cols, projectiles } => SceneKind::Building { rows, cols, projectiles },
            };
            generate_to(&kind, workers, seed, &out).map(|()| println!("wrote {}", out.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("overlapsim: {e}");
            ExitCode::FAILURE
        }
    }
}
