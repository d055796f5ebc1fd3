//! Overlap-set construction, blend weights, state blending and contact-driven load balancing.

mod balance;
mod blend;
mod partition;
mod weights;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use balance::{load_balance, BalanceEvent, Branch, LoadMetric};
pub use blend::{blend, BlendError};
pub use partition::{assign_to_overlap_set, grow_overlap, PartitionError};
pub use weights::{compute_weights, BlendWeights, WeightError};

use crate::assignment::{AssignmentError, WorkerAssignment};
use crate::types::{BodyId, WorkerId};

/// Growth and weight-search depths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapParams {
    /// BFS depth by which overlap sets grow around interface bodies.
    pub gamma: usize,
    /// Maximum BFS depth when searching for a body's nearest single-worker neighbor.
    pub beta: usize,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self { gamma: 0, beta: 2 }
    }
}

/// A single change to the body-to-worker map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    Activate { body: BodyId, worker: WorkerId },
    Deactivate { body: BodyId, worker: WorkerId },
}

impl Mutation {
    pub fn body(&self) -> BodyId {
        match *self {
            Mutation::Activate { body, .. } | Mutation::Deactivate { body, .. } => body,
        }
    }

    pub fn worker(&self) -> WorkerId {
        match *self {
            Mutation::Activate { worker, .. } | Mutation::Deactivate { worker, .. } => worker,
        }
    }

    pub fn apply(&self, assignment: &mut WorkerAssignment) -> Result<bool, AssignmentError> {
        match *self {
            Mutation::Activate { body, worker } => assignment.activate(body, worker),
            Mutation::Deactivate { body, worker } => assignment.deactivate(body, worker),
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mutation::Activate { body, worker } => write!(f, "+{body}@{worker}"),
            Mutation::Deactivate { body, worker } => write!(f, "-{body}@{worker}"),
        }
    }
}

/// Activates `body` in each of `workers`, recording only effective changes.
fn activate_all(
    assignment: &mut WorkerAssignment,
    body: BodyId,
    workers: impl IntoIterator<Item = WorkerId>,
    log: &mut Vec<Mutation>,
) -> Result<(), AssignmentError> {
    for worker in workers {
        if assignment.activate(body, worker)? {
            log.push(Mutation::Activate { body, worker });
        }
    }
    Ok(())
}

fn deactivate_all(
    assignment: &mut WorkerAssignment,
    body: BodyId,
    workers: impl IntoIterator<Item = WorkerId>,
    log: &mut Vec<Mutation>,
) -> Result<(), AssignmentError> {
    for worker in workers {
        if assignment.deactivate(body, worker)? {
            log.push(Mutation::Deactivate { body, worker });
        }
    }
    Ok(())
}
