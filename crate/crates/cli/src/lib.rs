//! Command-line driver: runs a coordinator over in-process or TCP workers, serves a TCP
//! worker, generates scenes, and writes run artifacts.

pub mod output;

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{info, warn};
use overlapsim_core::coordinator::{
    BalanceMetric, Coordinator, CoordinatorConfig, CoordinatorError, InProcWorkers, RunReport,
    DEFAULT_BARRIER_TIMEOUT,
};
use overlapsim_core::dynamics::SolverConfig;
use overlapsim_core::scenes::partition_spatially;
use overlapsim_core::transport::wire::code;
use overlapsim_core::transport::{Connection, TcpConnection, TransportError, WireMessage};
use overlapsim_core::worker::serve;
use overlapsim_core::{load_scene, OverlapParams, Scene, SceneError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use output::{emit_metrics, OutputError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scene: {0}")]
    Scene(#[from] SceneError),
    #[error("cannot reach worker at {addr}: {source}")]
    Connect { addr: String, source: std::io::Error },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Run(#[from] CoordinatorError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene: PathBuf,
    /// Worker count; `None` uses the scene's own count.
    pub workers: Option<u32>,
    pub gamma: usize,
    pub beta: usize,
    /// Overrides the scene timestep when set.
    pub timestep: Option<f64>,
    pub steps: u64,
    pub transport: TransportKind,
    pub worker_addrs: Vec<String>,
    pub solver_iters: usize,
    pub solver_tol: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub balance_metric: BalanceMetric,
    pub full_weight_recompute: bool,
    /// Disables body sharing entirely (ablation).
    pub no_sharing: bool,
    /// Relabels bodies into spatial slabs for the chosen worker count.
    pub repartition: bool,
    pub barrier_timeout_s: f64,
    pub write_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: PathBuf::new(),
            workers: None,
            gamma: 0,
            beta: 2,
            timestep: None,
            steps: 500,
            transport: TransportKind::Inproc,
            worker_addrs: Vec::new(),
            solver_iters: 1000,
            solver_tol: 1e-10,
            seed: 0,
            out_dir: PathBuf::from("out"),
            balance_metric: BalanceMetric::Bodies,
            full_weight_recompute: false,
            no_sharing: false,
            repartition: false,
            barrier_timeout_s: DEFAULT_BARRIER_TIMEOUT.as_secs_f64(),
            write_trajectory: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        if self.beta < 1 {
            return bad("beta must be at least 1");
        }
        if let Some(h) = self.timestep {
            if !(h > 0.0 && h.is_finite()) {
                return bad("timestep must be positive");
            }
        }
        if self.solver_iters == 0 {
            return bad("solver iterations must be at least 1");
        }
        if !(self.solver_tol >= 0.0) {
            return bad("solver tolerance must be non-negative");
        }
        if !(self.barrier_timeout_s > 0.0) {
            return bad("barrier timeout must be positive");
        }
        if self.transport == TransportKind::Tcp {
            if let Some(n) = self.workers {
                if self.worker_addrs.len() != n as usize {
                    return Err(CliError::Config(format!(
                        "tcp transport needs one --worker-addr per worker ({n}), got {}",
                        self.worker_addrs.len()
                    )));
                }
            } else if self.worker_addrs.is_empty() {
                return bad("tcp transport needs at least one --worker-addr");
            }
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { max_iter: self.solver_iters, tol: self.solver_tol, ..SolverConfig::default() }
    }

    pub fn coordinator(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            params: OverlapParams { gamma: self.gamma, beta: self.beta },
            metric: self.balance_metric,
            full_weight_recompute: self.full_weight_recompute,
            barrier_timeout: Duration::from_secs_f64(self.barrier_timeout_s),
            sharing: !self.no_sharing,
        }
    }

    /// Loads the scene and applies timestep, worker-count and repartition overrides.
    pub fn prepared_scene(&self) -> Result<(Scene, u32), CliError> {
        let mut scene = load_scene(&self.scene)?;
        if let Some(h) = self.timestep {
            scene.timestep = h;
        }
        let n = match (self.workers, self.transport) {
            (Some(n), _) => n,
            (None, TransportKind::Tcp) => self.worker_addrs.len() as u32,
            (None, TransportKind::Inproc) => scene.num_workers,
        };
        if self.repartition || n != scene.num_workers {
            let fits = scene
                .dynamic_ids()
                .all(|b| scene.body(b).initial_partition.iter().all(|w| w.0 < n));
            if !self.repartition && !fits {
                return Err(CliError::Config(format!(
                    "scene is partitioned for {} workers; pass --repartition to run it on {n}",
                    scene.num_workers
                )));
            }
            if self.repartition {
                partition_spatially(&mut scene, n);
            } else {
                scene.num_workers = n;
            }
        }
        Ok((scene, n))
    }
}

/// Report written to `report.json`.
#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a RunConfig,
    body_count: usize,
    dynamic_count: usize,
    #[serde(flatten)]
    report: &'a RunReport,
}

/// Runs a simulation and writes all artifacts into `config.out_dir`.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    config.validate()?;
    let (scene, n) = config.prepared_scene()?;
    let scene = Arc::new(scene);
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|source| OutputError::Io { path: config.out_dir.clone(), source })?;

    let (links, inproc): (Vec<Box<dyn Connection>>, Option<InProcWorkers>) = match config.transport {
        TransportKind::Inproc => {
            let (links, workers) = InProcWorkers::spawn(n);
            (links, Some(workers))
        }
        TransportKind::Tcp => {
            let mut links: Vec<Box<dyn Connection>> = Vec::new();
            for addr in &config.worker_addrs {
                let c = TcpConnection::connect(addr.as_str())
                    .map_err(|source| CliError::Connect { addr: addr.clone(), source })?;
                links.push(Box::new(c));
            }
            (links, None)
        }
    };
    info!("running {} steps on {n} workers ({:?})", config.steps, config.transport);

    let mut coordinator = Coordinator::new(Arc::clone(&scene), links, config.solver(), config.coordinator())?;
    let mut trajectory = if config.write_trajectory {
        let mut t = output::TrajectoryWriter::create(&config.out_dir, &scene)?;
        t.write_frame(0, coordinator.states())?;
        Some(t)
    } else {
        None
    };
    let mut write_error = None;
    let outcome = coordinator.simulate_observed(config.steps, |v| {
        if let (Some(t), None) = (trajectory.as_mut(), write_error.as_ref()) {
            if let Err(e) = t.write_frame(v.step + 1, v.states) {
                write_error = Some(e);
            }
        }
    });
    if let Err(e) = outcome {
        // workers see the dropped connections and exit
        drop(coordinator);
        if let Some(w) = inproc {
            w.join();
        }
        return Err(e.into());
    }
    if let Some(e) = write_error {
        return Err(e.into());
    }
    if let Some(t) = trajectory {
        t.finish()?;
    }
    let report = coordinator.shutdown();
    if let Some(w) = inproc {
        w.join();
    }

    emit_metrics(&report, &config.out_dir)?;
    output::write_events(&report.events, &config.out_dir.join(output::EVENTS_LOG))?;
    output::write_json(
        &ReportFile {
            config,
            body_count: scene.bodies.len(),
            dynamic_count: scene.dynamic_ids().count(),
            report: &report,
        },
        &config.out_dir.join(output::REPORT_JSON),
    )?;
    Ok(report)
}

/// A bound worker endpoint that serves exactly one coordinator.
pub struct WorkerServer {
    listener: TcpListener,
}

impl WorkerServer {
    pub fn bind(addr: &str) -> Result<Self, CliError> {
        let listener =
            TcpListener::bind(addr).map_err(|source| CliError::Bind { addr: addr.to_string(), source })?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves the first coordinator until it disconnects or sends shutdown. Later connection
    /// attempts during that time receive a busy error and are closed.
    pub fn serve(self) -> Result<(), CliError> {
        let (stream, peer) = self
            .listener
            .accept()
            .map_err(|source| CliError::Bind { addr: self.local_addr().to_string(), source })?;
        info!("coordinator connected from {peer}");
        let session = thread::spawn(move || -> Result<(), TransportError> {
            let mut conn = TcpConnection::new(stream)?;
            serve(&mut conn).map(|end| info!("session ended: {end:?}"))
        });

        self.listener
            .set_nonblocking(true)
            .map_err(|source| CliError::Bind { addr: self.local_addr().to_string(), source })?;
        while !session.is_finished() {
            match self.listener.accept() {
                Ok((s, other)) => {
                    warn!("refusing second coordinator from {other}");
                    refuse(s);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        session.join().expect("session thread panicked")?;
        Ok(())
    }
}

fn refuse(stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    if let Ok(mut c) = TcpConnection::new(stream) {
        let _ = c.send(WireMessage::error(code::BUSY, "worker already serves a coordinator"));
    }
}

/// Binds `addr` and serves one coordinator session.
pub fn worker_main(addr: &str) -> Result<(), CliError> {
    let server = WorkerServer::bind(addr)?;
    info!("worker listening on {}", server.local_addr());
    server.serve()
}

/// Which generator to run.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneKind {
    Chain { links: usize },
    Bridge { planks: usize },
    Bowl { spheres: usize },
    Building { rows: usize, cols: usize, projectiles: usize },
}

pub fn generate(kind: &SceneKind, workers: u32, seed: u64) -> Scene {
    use overlapsim_core::scenes;
    match *kind {
        SceneKind::Chain { links } => scenes::hanging_chain(links, workers),
        SceneKind::Bridge { planks } => scenes::bridge(planks, workers),
        SceneKind::Bowl { spheres } => scenes::bowl(spheres, workers, seed),
        SceneKind::Building { rows, cols, projectiles } => {
            scenes::building(rows, cols, projectiles, workers, seed)
        }
    }
}

pub fn generate_to(kind: &SceneKind, workers: u32, seed: u64, path: &Path) -> Result<(), CliError> {
    generate(kind, workers, seed).save(path)?;
    Ok(())
}
