//! A worker: full scene copy, its own active set, and a command loop.

use std::sync::Arc;

use log::{debug, info};
use thiserror::Error;

use crate::dynamics::{Engine, SolverConfig, SolverError};
use crate::scene::{Scene, SceneError};
use crate::transport::wire::code;
use crate::transport::{Connection, TransportError, WireMessage};
use crate::types::{BodyId, BodyState, WorkerId};

/// Largest accepted deviation of a reset quaternion from unit length.
pub const QUATERNION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("unknown body {0}")]
    UnknownBody(BodyId),
    #[error("body {0} is static and cannot be activated")]
    StaticBody(BodyId),
    #[error("body {0} is not active in this worker")]
    Inactive(BodyId),
    #[error("invalid state for body {0}: {1}")]
    InvalidState(BodyId, &'static str),
    #[error("step {step} failed: {source}")]
    Solver { step: u64, source: SolverError },
}

impl WorkerError {
    pub fn code(&self) -> u16 {
        match self {
            WorkerError::UnknownBody(_) | WorkerError::StaticBody(_) => code::UNKNOWN_BODY,
            WorkerError::Inactive(_) => code::INACTIVE_BODY,
            WorkerError::InvalidState(..) => code::INVALID_STATE,
            WorkerError::Solver { .. } => code::SOLVER,
        }
    }

    fn reply(&self) -> WireMessage {
        WireMessage::error(self.code(), self.to_string())
    }
}

/// What one step produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub states: Vec<(BodyId, BodyState)>,
    pub residual: f64,
    pub contacts: usize,
}

/// One worker's simulation state.
#[derive(Clone, Debug)]
pub struct WorkerRuntime {
    id: WorkerId,
    engine: Engine,
    step_count: u64,
}

impl WorkerRuntime {
    pub fn new(id: WorkerId, scene: Arc<Scene>, config: SolverConfig) -> Self {
        Self { id, engine: Engine::new(scene, config), step_count: 0 }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn is_active(&self, b: BodyId) -> bool {
        self.engine.is_active(b)
    }

    fn require_known(&self, b: BodyId) -> Result<(), WorkerError> {
        if self.engine.is_known(b) {
            Ok(())
        } else {
            Err(WorkerError::UnknownBody(b))
        }
    }

    /// Idempotent.
    pub fn handle_activate(&mut self, b: BodyId) -> Result<(), WorkerError> {
        self.require_known(b)?;
        if !self.engine.activate(b) {
            return Err(WorkerError::StaticBody(b));
        }
        Ok(())
    }

    /// The body's last state is kept for a later re-activation.
    pub fn handle_deactivate(&mut self, b: BodyId) -> Result<(), WorkerError> {
        self.require_known(b)?;
        if !self.engine.deactivate(b) {
            return Err(WorkerError::Inactive(b));
        }
        Ok(())
    }

    pub fn handle_reset_state(&mut self, b: BodyId, s: BodyState) -> Result<(), WorkerError> {
        self.require_known(b)?;
        if !self.engine.is_active(b) {
            return Err(WorkerError::Inactive(b));
        }
        if !s.is_finite() {
            return Err(WorkerError::InvalidState(b, "non-finite component"));
        }
        if s.quaternion_norm_error() > QUATERNION_TOLERANCE {
            return Err(WorkerError::InvalidState(b, "orientation is not a unit quaternion"));
        }
        self.engine.set_state(b, s);
        Ok(())
    }

    pub fn handle_get_state(&self, b: BodyId) -> Result<BodyState, WorkerError> {
        self.require_known(b)?;
        Ok(*self.engine.state(b))
    }

    /// Collision detection, solve and integration over the active bodies.
    pub fn handle_step(&mut self) -> Result<StepOutput, WorkerError> {
        let stats = self
            .engine
            .step()
            .map_err(|source| WorkerError::Solver { step: self.step_count, source })?;
        self.step_count += 1;
        let states = self.engine.active().iter().map(|&b| (b, *self.engine.state(b))).collect();
        Ok(StepOutput { states, residual: stats.residual, contacts: stats.contacts })
    }

    /// Applies one command and builds its reply.
    pub fn handle(&mut self, msg: WireMessage) -> WireMessage {
        let ack = |r: Result<(), WorkerError>| match r {
            Ok(()) => WireMessage::Ack,
            Err(e) => e.reply(),
        };
        match msg {
            WireMessage::Activate { body } => ack(self.handle_activate(body)),
            WireMessage::Deactivate { body } => ack(self.handle_deactivate(body)),
            WireMessage::ResetState { body, state } => ack(self.handle_reset_state(body, state)),
            WireMessage::ResetBatch { states } => {
                ack(states.into_iter().try_for_each(|(b, s)| self.handle_reset_state(b, s)))
            }
            WireMessage::Step => match self.handle_step() {
                Ok(out) => WireMessage::StepAck {
                    residual: out.residual,
                    contacts: out.contacts as u32,
                    states: out.states,
                },
                Err(e) => e.reply(),
            },
            WireMessage::GetState { body } => match self.handle_get_state(body) {
                Ok(state) => WireMessage::StateReply { body, state },
                Err(e) => e.reply(),
            },
            other => WireMessage::error(
                code::PROTOCOL,
                format!("unexpected message type {}", other.type_code()),
            ),
        }
    }
}

/// How a serve loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServeEnd {
    Shutdown,
    Disconnected,
}

/// Serves commands until shutdown or disconnect. The first message must be `LoadScene`.
pub fn serve(conn: &mut impl Connection) -> Result<ServeEnd, TransportError> {
    let mut runtime: Option<WorkerRuntime> = None;
    loop {
        let msg = match conn.recv(None) {
            Ok(m) => m,
            Err(TransportError::Disconnected) => {
                info!("coordinator disconnected");
                return Ok(ServeEnd::Disconnected);
            }
            Err(e) => return Err(e),
        };
        let reply = match (msg, runtime.as_mut()) {
            (WireMessage::Shutdown, _) => {
                conn.send(WireMessage::Ack)?;
                return Ok(ServeEnd::Shutdown);
            }
            (WireMessage::LoadScene { worker, config, scene_json }, _) => {
                match Scene::from_json(&scene_json) {
                    Ok(scene) => {
                        debug!("worker {worker}: loaded scene with {} bodies", scene.bodies.len());
                        runtime = Some(WorkerRuntime::new(WorkerId(worker), Arc::new(scene), config));
                        WireMessage::Ack
                    }
                    Err(e) => scene_error(e),
                }
            }
            (msg, Some(rt)) => rt.handle(msg),
            (msg, None) => WireMessage::error(
                code::PROTOCOL,
                format!("message type {} before scene load", msg.type_code()),
            ),
        };
        match conn.send(reply) {
            Ok(()) => {}
            Err(TransportError::Disconnected) => {
                info!("coordinator disconnected");
                return Ok(ServeEnd::Disconnected);
            }
            Err(e) => return Err(e),
        }
    }
}

fn scene_error(e: SceneError) -> WireMessage {
    WireMessage::error(code::SCENE, e.to_string())
}
