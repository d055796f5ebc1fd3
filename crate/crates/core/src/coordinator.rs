//! The main server: global view of the scene, the per-step reset / balance / step / blend loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{AssignmentError, WorkerAssignment};
use crate::dynamics::{collide_scene, jointed_pairs, SolverConfig};
use crate::graph::ConstraintGraph;
use crate::overlap::{
    assign_to_overlap_set, blend, compute_weights, load_balance, BalanceEvent, BlendError,
    BlendWeights, LoadMetric, Mutation, OverlapParams, PartitionError, WeightError,
};
use crate::scene::Scene;
use crate::transport::{inproc_pair, Connection, TransportError, WireMessage};
use crate::types::{BodyId, BodyState, Contact, PairKey, WorkerId};
use crate::worker::serve;

pub const DEFAULT_BARRIER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("invalid setup: {0}")]
    Config(String),
    #[error("worker {worker} at step {step}: {source}")]
    Transport { worker: WorkerId, step: u64, source: TransportError },
    #[error("worker {worker} at step {step} replied error {code}: {text}")]
    Worker { worker: WorkerId, step: u64, code: u16, text: String },
    #[error("worker {worker} at step {step}: unexpected reply {detail}")]
    Protocol { worker: WorkerId, step: u64, detail: String },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("blending body {body} at step {step}: {source}")]
    Blend { body: BodyId, step: u64, source: BlendError },
}

/// A worker's step ack: residual, contact count and the states of its active bodies.
type StepReply = (f64, u32, Vec<(BodyId, BodyState)>);

/// Which quantity load balancing compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMetric {
    #[default]
    Bodies,
    Contacts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinatorConfig {
    pub params: OverlapParams,
    pub metric: BalanceMetric,
    /// Recompute weights of every shared body each step instead of only those near a change.
    pub full_weight_recompute: bool,
    pub barrier_timeout: Duration,
    /// When false no body is ever shared: interface joints are simply cut and load balancing
    /// is off. Used for ablation runs.
    pub sharing: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            params: OverlapParams::default(),
            metric: BalanceMetric::Bodies,
            full_weight_recompute: false,
            barrier_timeout: DEFAULT_BARRIER_TIMEOUT,
            sharing: true,
        }
    }
}

/// Per-worker numbers for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerFrame {
    pub active_bodies: usize,
    pub contacts: usize,
    pub residual: f64,
}

/// Everything measured for one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub step: u64,
    pub wall_ms: f64,
    /// Distinct contacts found by the main-server pass, statics included.
    pub total_contacts: usize,
    pub new_contacts: usize,
    pub overlap_bodies: usize,
    pub lcp_residual_total: f64,
    /// Largest joint anchor separation divided by the scene diagonal.
    pub joint_violation_max_rel: f64,
    /// Mean joint anchor separation in meters.
    pub joint_violation_mean: f64,
    pub weights_recomputed: usize,
    /// Largest |Σw - 1| over all weight sets in use this step.
    pub weight_sum_error: f64,
    pub weight_min: f64,
    /// Largest ||q| - 1| over blended orientations.
    pub quaternion_norm_error: f64,
    pub workers: Vec<WorkerFrame>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: u64,
    #[serde(flatten)]
    pub event: BalanceEvent,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub num_workers: u32,
    pub params_gamma: usize,
    pub params_beta: usize,
    /// Overlap set size right after the initial joint-interface sharing.
    pub initial_overlap: usize,
    pub initial_mutations: Vec<Mutation>,
    pub frames: Vec<FrameRecord>,
    pub events: Vec<StepEvent>,
}

/// Read-only view handed to step observers after blending.
pub struct StepView<'a> {
    pub step: u64,
    /// Blended state of every body, indexed by id.
    pub states: &'a [BodyState],
    pub assignment: &'a WorkerAssignment,
    pub weights: &'a BTreeMap<BodyId, BlendWeights>,
    pub frame: &'a FrameRecord,
}

pub struct Coordinator {
    scene: Arc<Scene>,
    config: CoordinatorConfig,
    links: Vec<Box<dyn Connection>>,
    assignment: WorkerAssignment,
    graph: ConstraintGraph,
    jointed: BTreeSet<PairKey>,
    dynamic: Vec<BodyId>,
    blended: Vec<BodyState>,
    weights: BTreeMap<BodyId, BlendWeights>,
    prev_contacts: BTreeSet<PairKey>,
    last_contacts: Vec<usize>,
    step: u64,
    report: RunReport,
    diagonal: f64,
}

impl Coordinator {
    /// Loads the scene into every worker and sets up the initial shared region.
    pub fn new(
        scene: Arc<Scene>,
        links: Vec<Box<dyn Connection>>,
        solver: SolverConfig,
        config: CoordinatorConfig,
    ) -> Result<Self, CoordinatorError> {
        let n = links.len() as u32;
        if n == 0 {
            return Err(CoordinatorError::Config("at least one worker is required".into()));
        }
        if config.params.beta == 0 {
            return Err(CoordinatorError::Config("beta must be at least 1".into()));
        }
        for b in scene.bodies.iter().filter(|b| !b.is_static()) {
            if let Some(w) = b.initial_partition.iter().find(|w| w.0 >= n) {
                return Err(CoordinatorError::Config(format!(
                    "body {} is labeled for worker {w} but only {n} workers are connected",
                    b.id
                )));
            }
        }
        let mut c = Self {
            assignment: WorkerAssignment::new(n),
            graph: ConstraintGraph::from_scene(&scene),
            jointed: jointed_pairs(&scene),
            dynamic: scene.dynamic_ids().collect(),
            blended: scene.initial_states(),
            diagonal: scene.bounding_diagonal(),
            weights: BTreeMap::new(),
            prev_contacts: BTreeSet::new(),
            last_contacts: vec![0; n as usize],
            step: 0,
            report: RunReport {
                num_workers: n,
                params_gamma: config.params.gamma,
                params_beta: config.params.beta,
                ..RunReport::default()
            },
            scene,
            config,
            links,
        };
        c.handshake(solver)?;
        c.initialize_partitioning()?;
        Ok(c)
    }

    fn handshake(&mut self, solver: SolverConfig) -> Result<(), CoordinatorError> {
        let json = self.scene.to_json();
        for w in 0..self.links.len() {
            let msg = WireMessage::LoadScene { worker: w as u32, config: solver, scene_json: json.clone() };
            self.send(WorkerId(w as u32), msg)?;
        }
        for w in 0..self.links.len() {
            self.expect_ack(WorkerId(w as u32), Some(self.config.barrier_timeout))?;
        }
        Ok(())
    }

    /// Applies the scene's partition labels, shares bodies across joint interfaces and
    /// computes the first weights.
    fn initialize_partitioning(&mut self) -> Result<(), CoordinatorError> {
        let mut assignment = WorkerAssignment::new(self.num_workers());
        for b in self.scene.bodies.iter().filter(|b| !b.is_static()) {
            assignment.set_workers(b.id, b.initial_partition.iter().copied().collect());
        }
        let mutations = if self.config.sharing {
            assign_to_overlap_set(self.config.params.gamma, &self.graph, &mut assignment)?
        } else {
            Vec::new()
        };
        self.assignment = assignment;
        info!(
            "initial partition: {} bodies over {} workers, {} shared",
            self.dynamic.len(),
            self.num_workers(),
            self.assignment.overlap_set().len()
        );
        for w in self.assignment.worker_ids().collect::<Vec<_>>() {
            let active: Vec<_> = self.assignment.active(w).iter().copied().collect();
            for &body in &active {
                self.send(w, WireMessage::Activate { body })?;
            }
            for _ in &active {
                self.expect_ack(w, Some(self.config.barrier_timeout))?;
            }
        }
        for o in self.assignment.overlap_set() {
            let w = compute_weights(o, &self.graph, &self.assignment, self.config.params.beta)?;
            self.weights.insert(o, w);
        }
        self.report.initial_overlap = self.weights.len();
        self.report.initial_mutations = mutations;
        Ok(())
    }

    pub fn num_workers(&self) -> u32 {
        self.links.len() as u32
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn assignment(&self) -> &WorkerAssignment {
        &self.assignment
    }

    pub fn graph(&self) -> &ConstraintGraph {
        &self.graph
    }

    pub fn weights(&self) -> &BTreeMap<BodyId, BlendWeights> {
        &self.weights
    }

    /// Authoritative state of every body, indexed by id.
    pub fn states(&self) -> &[BodyState] {
        &self.blended
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn into_report(self) -> RunReport {
        self.report.clone()
    }

    /// Runs `steps` steps.
    pub fn simulate(&mut self, steps: u64) -> Result<&RunReport, CoordinatorError> {
        self.simulate_observed(steps, |_| {})
    }

    /// Runs `steps` steps, calling `observe` after each one.
    pub fn simulate_observed(
        &mut self,
        steps: u64,
        mut observe: impl FnMut(&StepView<'_>),
    ) -> Result<&RunReport, CoordinatorError> {
        for _ in 0..steps {
            let frame = self.advance()?;
            observe(&StepView {
                step: frame.step,
                states: &self.blended,
                assignment: &self.assignment,
                weights: &self.weights,
                frame: &frame,
            });
            self.report.frames.push(frame);
        }
        Ok(&self.report)
    }

    /// Contacts among all bodies at the current blended states. No solve, no integration.
    pub fn main_server_collision_pass(&self) -> Vec<Contact> {
        collide_scene(&self.scene, &self.blended, self.dynamic.iter().copied(), &self.jointed)
    }

    fn is_dynamic(&self, b: BodyId) -> bool {
        !self.scene.body(b).is_static()
    }

    /// One full step.
    fn advance(&mut self) -> Result<FrameRecord, CoordinatorError> {
        let started = Instant::now();
        let step = self.step;

        let contacts = self.main_server_collision_pass();
        let total_contacts = contacts.iter().map(|c| (c.pair(), c.feature)).collect::<BTreeSet<_>>().len();
        let pairs: BTreeSet<PairKey> = contacts
            .iter()
            .map(|c| c.pair())
            .filter(|p| self.is_dynamic(p.0) && self.is_dynamic(p.1))
            .collect();
        let pair_list: Vec<PairKey> = pairs.iter().copied().collect();
        let delta = self
            .graph
            .set_contact_pairs(&pair_list)
            .expect("main-server contacts only name scene bodies");
        let new: Vec<PairKey> = pairs.difference(&self.prev_contacts).copied().collect();
        self.prev_contacts = pairs;

        let events = if self.config.sharing {
            let metric = match self.config.metric {
                BalanceMetric::Bodies => LoadMetric::Bodies,
                BalanceMetric::Contacts => LoadMetric::Contacts(self.last_contacts.clone()),
            };
            load_balance(&new, self.config.params.gamma, &self.graph, &mut self.assignment, &metric)?
        } else {
            Vec::new()
        };
        let mutations: Vec<Mutation> = events.iter().flat_map(|e| e.mutations.iter().copied()).collect();
        let changed: BTreeSet<BodyId> = mutations.iter().map(|m| m.body()).collect();
        for e in &events {
            debug!("step {step}: {} on {:?}: {:?}", e.branch, e.contact, e.mutations);
        }

        let dirty: BTreeSet<BodyId> = changed.iter().copied().chain(delta.endpoints()).collect();
        let recomputed = self.update_weights(&dirty)?;

        let pending = self.dispatch(step, &mutations, &changed)?;
        let acks = self.barrier(step, &pending)?;
        let frame_workers = self.blend_step(step, acks)?;

        let (violation_max, violation_mean) = self.joint_violation();
        let (weight_sum_error, weight_min) = self.weight_health();
        let quaternion_norm_error = self
            .weights
            .keys()
            .map(|o| self.blended[o.index()].quaternion_norm_error())
            .fold(0.0, f64::max);

        self.last_contacts = frame_workers.iter().map(|w| w.contacts).collect();
        self.report.events.extend(events.into_iter().map(|event| StepEvent { step, event }));
        self.step += 1;
        Ok(FrameRecord {
            step,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            total_contacts,
            new_contacts: new.len(),
            overlap_bodies: self.weights.len(),
            lcp_residual_total: frame_workers.iter().map(|w| w.residual).sum(),
            joint_violation_max_rel: violation_max / self.diagonal,
            joint_violation_mean: violation_mean,
            weights_recomputed: recomputed,
            weight_sum_error,
            weight_min,
            quaternion_norm_error,
            workers: frame_workers,
        })
    }

    /// Brings `weights` in line with the current overlap set. Returns how many were computed.
    fn update_weights(&mut self, dirty: &BTreeSet<BodyId>) -> Result<usize, CoordinatorError> {
        let overlap = self.assignment.overlap_set();
        self.weights.retain(|o, _| overlap.contains(o));
        let beta = self.config.params.beta;
        let targets: Vec<BodyId> = if self.config.full_weight_recompute {
            overlap.iter().copied().collect()
        } else {
            let near = self.graph.within(dirty.iter().copied(), beta);
            overlap
                .iter()
                .copied()
                .filter(|o| near.contains(o) || !self.weights.contains_key(o))
                .collect()
        };
        for &o in &targets {
            let w = compute_weights(o, &self.graph, &self.assignment, beta)?;
            self.weights.insert(o, w);
        }
        Ok(targets.len())
    }

    /// Sends membership changes, state resets and the step command to every worker.
    ///
    /// Every shared body, and every body whose membership just changed, is reset to its last
    /// blended state in each of its workers so all copies start the step identical.
    /// Returns, per worker, how many plain acks precede its step ack.
    fn dispatch(
        &mut self,
        step: u64,
        mutations: &[Mutation],
        changed: &BTreeSet<BodyId>,
    ) -> Result<Vec<usize>, CoordinatorError> {
        let n = self.num_workers() as usize;
        let mut per_worker: Vec<Vec<WireMessage>> = vec![Vec::new(); n];
        for m in mutations {
            let msg = match *m {
                Mutation::Activate { body, .. } => WireMessage::Activate { body },
                Mutation::Deactivate { body, .. } => WireMessage::Deactivate { body },
            };
            per_worker[m.worker().index()].push(msg);
        }
        let mut resets: Vec<Vec<(BodyId, BodyState)>> = vec![Vec::new(); n];
        let reset_bodies: BTreeSet<BodyId> = self.weights.keys().chain(changed.iter()).copied().collect();
        for b in reset_bodies {
            for w in self.assignment.workers(b) {
                resets[w.index()].push((b, self.blended[b.index()]));
            }
        }
        let mut pending = Vec::with_capacity(n);
        for (w, (mut msgs, states)) in per_worker.into_iter().zip(resets).enumerate() {
            if !states.is_empty() {
                msgs.push(WireMessage::ResetBatch { states });
            }
            pending.push(msgs.len());
            msgs.push(WireMessage::Step);
            for msg in msgs {
                self.send_at(WorkerId(w as u32), step, msg)?;
            }
        }
        Ok(pending)
    }

    /// Waits for every worker's replies to this step's commands, ending with its step ack.
    /// Returns the acks' `(residual, contacts, states)`.
    fn barrier(
        &mut self,
        step: u64,
        pending: &[usize],
    ) -> Result<Vec<StepReply>, CoordinatorError> {
        let deadline = Instant::now() + self.config.barrier_timeout;
        let mut acks = Vec::with_capacity(self.links.len());
        for (w, &count) in pending.iter().enumerate() {
            let worker = WorkerId(w as u32);
            for _ in 0..count {
                let left = deadline.saturating_duration_since(Instant::now());
                self.expect_ack_at(worker, step, Some(left))?;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.recv_at(worker, step, Some(left))? {
                WireMessage::StepAck { residual, contacts, states } => acks.push((residual, contacts, states)),
                other => return Err(self.unexpected(worker, step, other)),
            }
        }
        Ok(acks)
    }

    /// Adopts single-worker states and blends shared ones.
    fn blend_step(
        &mut self,
        step: u64,
        acks: Vec<StepReply>,
    ) -> Result<Vec<WorkerFrame>, CoordinatorError> {
        let mut shared: BTreeMap<BodyId, BTreeMap<WorkerId, BodyState>> = BTreeMap::new();
        let mut frames = Vec::with_capacity(acks.len());
        for (w, (residual, contacts, states)) in acks.into_iter().enumerate() {
            let worker = WorkerId(w as u32);
            let expected = self.assignment.active(worker);
            if states.len() != expected.len() || states.iter().any(|(b, _)| !expected.contains(b)) {
                return Err(CoordinatorError::Protocol {
                    worker,
                    step,
                    detail: format!(
                        "step ack covers {} bodies, {} are assigned",
                        states.len(),
                        expected.len()
                    ),
                });
            }
            frames.push(WorkerFrame { active_bodies: states.len(), contacts: contacts as usize, residual });
            for (b, s) in states {
                if self.weights.contains_key(&b) {
                    shared.entry(b).or_default().insert(worker, s);
                } else {
                    self.blended[b.index()] = s;
                }
            }
        }
        for (b, per_worker) in shared {
            let out = blend(&self.weights[&b], &per_worker)
                .map_err(|source| CoordinatorError::Blend { body: b, step, source })?;
            self.blended[b.index()] = out;
        }
        Ok(frames)
    }

    /// Largest and mean joint anchor separation at the blended states.
    fn joint_violation(&self) -> (f64, f64) {
        let joints = &self.scene.joints;
        if joints.is_empty() {
            return (0.0, 0.0);
        }
        let mut max: f64 = 0.0;
        let mut sum = 0.0;
        for j in joints {
            let d = j.separation(&self.blended[j.body_a.index()], &self.blended[j.body_b.index()]);
            max = max.max(d);
            sum += d;
        }
        (max, sum / joints.len() as f64)
    }

    fn weight_health(&self) -> (f64, f64) {
        let mut sum_err: f64 = 0.0;
        let mut min = f64::INFINITY;
        for w in self.weights.values() {
            let total: f64 = w.iter().map(|(_, x)| x).sum();
            sum_err = sum_err.max((total - 1.0).abs());
            for (_, x) in w.iter() {
                min = min.min(x);
            }
        }
        (sum_err, if min.is_finite() { min } else { 0.0 })
    }

    fn send(&mut self, w: WorkerId, msg: WireMessage) -> Result<(), CoordinatorError> {
        self.send_at(w, self.step, msg)
    }

    fn send_at(&mut self, w: WorkerId, step: u64, msg: WireMessage) -> Result<(), CoordinatorError> {
        self.links[w.index()]
            .send(msg)
            .map_err(|source| CoordinatorError::Transport { worker: w, step, source })
    }

    fn recv_at(
        &mut self,
        w: WorkerId,
        step: u64,
        timeout: Option<Duration>,
    ) -> Result<WireMessage, CoordinatorError> {
        let msg = self.links[w.index()]
            .recv(timeout)
            .map_err(|source| CoordinatorError::Transport { worker: w, step, source })?;
        if let WireMessage::Error { code, text } = msg {
            return Err(CoordinatorError::Worker { worker: w, step, code, text });
        }
        Ok(msg)
    }

    fn expect_ack(&mut self, w: WorkerId, timeout: Option<Duration>) -> Result<(), CoordinatorError> {
        self.expect_ack_at(w, self.step, timeout)
    }

    fn expect_ack_at(
        &mut self,
        w: WorkerId,
        step: u64,
        timeout: Option<Duration>,
    ) -> Result<(), CoordinatorError> {
        match self.recv_at(w, step, timeout)? {
            WireMessage::Ack => Ok(()),
            other => Err(self.unexpected(w, step, other)),
        }
    }

    fn unexpected(&self, worker: WorkerId, step: u64, msg: WireMessage) -> CoordinatorError {
        CoordinatorError::Protocol { worker, step, detail: format!("message type {}", msg.type_code()) }
    }

    /// Asks every worker to stop. Errors are logged, not returned.
    pub fn shutdown(mut self) -> RunReport {
        for w in 0..self.links.len() {
            let worker = WorkerId(w as u32);
            if self.send(worker, WireMessage::Shutdown).is_err()
                || self.expect_ack(worker, Some(Duration::from_secs(5))).is_err()
            {
                warn!("worker {worker} did not acknowledge shutdown");
            }
        }
        std::mem::take(&mut self.report)
    }
}

/// Worker threads serving in-process connections.
pub struct InProcWorkers {
    handles: Vec<JoinHandle<()>>,
}

impl InProcWorkers {
    /// Spawns `n` worker threads and returns the coordinator ends of their connections.
    pub fn spawn(n: u32) -> (Vec<Box<dyn Connection>>, Self) {
        let mut links: Vec<Box<dyn Connection>> = Vec::new();
        let mut handles = Vec::new();
        for w in 0..n {
            let (coord, mut worker) = inproc_pair();
            links.push(Box::new(coord));
            let h = std::thread::Builder::new()
                .name(format!("worker-{w}"))
                .spawn(move || {
                    if let Err(e) = serve(&mut worker) {
                        warn!("worker {w} stopped: {e}");
                    }
                })
                .expect("spawn worker thread");
            handles.push(h);
        }
        (links, Self { handles })
    }

    pub fn join(self) {
        for h in self.handles {
            let _ = h.join();
        }
    }
}
