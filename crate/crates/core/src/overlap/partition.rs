use crate::assignment::{AssignmentError, WorkerAssignment, WorkerSet};
use crate::graph::{ConstraintGraph, GraphError};
use crate::types::BodyId;

use super::{activate_all, Mutation};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

/// Shares every joint that crosses a worker boundary between both workers, then grows the
/// shared region `gamma` hops around each endpoint.
///
/// Only joints whose endpoints each belong to exactly one, different, worker are considered.
/// Edges are visited in ascending pair order against the live assignment.
pub fn assign_to_overlap_set(
    gamma: usize,
    g: &ConstraintGraph,
    assignment: &mut WorkerAssignment,
) -> Result<Vec<Mutation>, PartitionError> {
    let mut log = Vec::new();
    let edges: Vec<_> = g.joint_edges().collect();
    for pair in edges {
        let (a, b) = (pair.0, pair.1);
        if !assignment.contains(a) || !assignment.contains(b) {
            continue;
        }
        let wa = assignment.workers(a).clone();
        let wb = assignment.workers(b).clone();
        if wa.len() != 1 || wb.len() != 1 || wa == wb {
            continue;
        }
        let union: WorkerSet = wa.union(&wb).copied().collect();
        activate_all(assignment, a, wb.iter().copied(), &mut log)?;
        log.extend(grow_overlap(a, gamma, &union, g, assignment)?);
        activate_all(assignment, b, wa.iter().copied(), &mut log)?;
        log.extend(grow_overlap(b, gamma, &union, g, assignment)?);
    }
    Ok(log)
}

/// Activates every body within `gamma` hops of `root` that is not yet shared in each worker
/// of `workers_r` it is missing from.
pub fn grow_overlap(
    root: BodyId,
    gamma: usize,
    workers_r: &WorkerSet,
    g: &ConstraintGraph,
    assignment: &mut WorkerAssignment,
) -> Result<Vec<Mutation>, PartitionError> {
    let mut log = Vec::new();
    if gamma == 0 {
        return Ok(log);
    }
    for n in g.bfs_vertices(root, gamma)? {
        if !assignment.contains(n) || assignment.is_overlap(n) {
            continue;
        }
        let missing: Vec<_> = workers_r.difference(assignment.workers(n)).copied().collect();
        activate_all(assignment, n, missing, &mut log)?;
    }
    Ok(log)
}
