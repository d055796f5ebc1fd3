use std::collections::BTreeMap;

use thiserror::Error;

use crate::assignment::WorkerAssignment;
use crate::graph::{ConstraintGraph, GraphError};
use crate::types::{BodyId, WorkerId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightError {
    #[error("body {0} is not shared between workers")]
    NotOverlapping(BodyId),
    #[error("search depth must be at least 1")]
    ZeroDepth,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Convex per-worker weights of one shared body. Keys are exactly the body's workers.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights(BTreeMap<WorkerId, f64>);

impl BlendWeights {
    /// Normalizes non-negative raw weights to sum to one.
    pub fn normalized(raw: BTreeMap<WorkerId, f64>) -> Self {
        let total: f64 = raw.values().sum();
        debug_assert!(total > 0.0 && raw.values().all(|w| *w >= 0.0));
        Self(raw.into_iter().map(|(k, w)| (k, w / total)).collect())
    }

    /// Equal weight for every worker.
    pub fn uniform(workers: impl IntoIterator<Item = WorkerId>) -> Self {
        Self::normalized(workers.into_iter().map(|w| (w, 1.0)).collect())
    }

    pub fn get(&self, w: WorkerId) -> Option<f64> {
        self.0.get(&w).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WorkerId, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.0.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<WorkerId, f64> {
        &self.0
    }
}

/// Inverse-distance weights: each worker of `o` is weighted by one over the hop distance to the
/// nearest body owned by that worker alone, searched up to `beta` hops. Workers with no such
/// body in range get `1 / beta`.
pub fn compute_weights(
    o: BodyId,
    g: &ConstraintGraph,
    assignment: &WorkerAssignment,
    beta: usize,
) -> Result<BlendWeights, WeightError> {
    if beta == 0 {
        return Err(WeightError::ZeroDepth);
    }
    let w_o = assignment.workers(o);
    if w_o.len() < 2 {
        return Err(WeightError::NotOverlapping(o));
    }
    let dist = g.bfs_distances(o, beta)?;
    let mut nearest: BTreeMap<WorkerId, usize> = BTreeMap::new();
    for (&n, &d) in &dist {
        let w_n = assignment.workers(n);
        if w_n.len() != 1 {
            continue;
        }
        let w = *w_n.first().expect("one worker");
        if w_o.contains(&w) {
            let e = nearest.entry(w).or_insert(d);
            *e = (*e).min(d);
        }
    }
    let raw = w_o
        .iter()
        .map(|&w| {
            let d = nearest.get(&w).copied().unwrap_or(beta);
            (w, 1.0 / d as f64)
        })
        .collect();
    Ok(BlendWeights::normalized(raw))
}
