//! Which workers simulate which bodies.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::scene::Scene;
use crate::types::{BodyId, WorkerId};

pub type WorkerSet = BTreeSet<WorkerId>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("body {0} is not a dynamic body of this assignment")]
    UnknownBody(BodyId),
    #[error("worker {0} out of range")]
    UnknownWorker(WorkerId),
    #[error("refusing to deactivate body {0} from its last worker {1}")]
    LastWorker(BodyId, WorkerId),
}

/// The global body-to-worker map.
///
/// Keeps both directions: the worker set of each body and the active set of each worker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkerAssignment {
    workers_of: BTreeMap<BodyId, WorkerSet>,
    active: Vec<BTreeSet<BodyId>>,
}

impl WorkerAssignment {
    pub fn new(num_workers: u32) -> Self {
        Self {
            workers_of: BTreeMap::new(),
            active: vec![BTreeSet::new(); num_workers as usize],
        }
    }

    /// Applies each dynamic body's initial partition labels.
    pub fn from_scene(scene: &Scene) -> Self {
        let mut a = Self::new(scene.num_workers);
        for b in scene.bodies.iter().filter(|b| !b.is_static()) {
            for &w in &b.initial_partition {
                a.insert(b.id, w);
            }
        }
        a
    }

    fn insert(&mut self, body: BodyId, worker: WorkerId) -> bool {
        let added = self.workers_of.entry(body).or_default().insert(worker);
        self.active[worker.index()].insert(body);
        added
    }

    /// Replaces the membership of `body` wholesale, adding it if untracked.
    pub fn set_workers(&mut self, body: BodyId, workers: WorkerSet) {
        assert!(!workers.is_empty(), "body {body} needs at least one worker");
        if let Some(old) = self.workers_of.remove(&body) {
            for w in old {
                self.active[w.index()].remove(&body);
            }
        }
        for w in workers {
            self.insert(body, w);
        }
    }

    pub fn num_workers(&self) -> u32 {
        self.active.len() as u32
    }

    pub fn worker_ids(&self) -> impl Iterator<Item = WorkerId> {
        (0..self.num_workers()).map(WorkerId)
    }

    pub fn bodies(&self) -> impl Iterator<Item = BodyId> + '_ {
        self.workers_of.keys().copied()
    }

    pub fn contains(&self, body: BodyId) -> bool {
        self.workers_of.contains_key(&body)
    }

    /// Workers simulating `body`; empty for bodies the assignment does not track (statics).
    pub fn workers(&self, body: BodyId) -> &WorkerSet {
        static EMPTY: WorkerSet = BTreeSet::new();
        self.workers_of.get(&body).unwrap_or(&EMPTY)
    }

    pub fn multiplicity(&self, body: BodyId) -> usize {
        self.workers(body).len()
    }

    pub fn is_overlap(&self, body: BodyId) -> bool {
        self.multiplicity(body) > 1
    }

    /// Active bodies of one worker.
    pub fn active(&self, worker: WorkerId) -> &BTreeSet<BodyId> {
        &self.active[worker.index()]
    }

    /// Number of active bodies in one worker.
    pub fn load(&self, worker: WorkerId) -> usize {
        self.active[worker.index()].len()
    }

    /// Total active-body count summed over a set of workers.
    pub fn load_of(&self, workers: &WorkerSet) -> usize {
        workers.iter().map(|&w| self.load(w)).sum()
    }

    /// Adds `body` to `worker`. Returns whether membership changed.
    pub fn activate(&mut self, body: BodyId, worker: WorkerId) -> Result<bool, AssignmentError> {
        if worker.index() >= self.active.len() {
            return Err(AssignmentError::UnknownWorker(worker));
        }
        if !self.workers_of.contains_key(&body) {
            return Err(AssignmentError::UnknownBody(body));
        }
        Ok(self.insert(body, worker))
    }

    /// Removes `body` from `worker`. Never removes a body from its last worker.
    pub fn deactivate(&mut self, body: BodyId, worker: WorkerId) -> Result<bool, AssignmentError> {
        if worker.index() >= self.active.len() {
            return Err(AssignmentError::UnknownWorker(worker));
        }
        let set = self
            .workers_of
            .get_mut(&body)
            .ok_or(AssignmentError::UnknownBody(body))?;
        if !set.contains(&worker) {
            return Ok(false);
        }
        if set.len() == 1 {
            return Err(AssignmentError::LastWorker(body, worker));
        }
        set.remove(&worker);
        self.active[worker.index()].remove(&body);
        Ok(true)
    }

    /// The overlap set: bodies active in more than one worker.
    pub fn overlap_set(&self) -> BTreeSet<BodyId> {
        self.workers_of
            .iter()
            .filter(|(_, ws)| ws.len() > 1)
            .map(|(&b, _)| b)
            .collect()
    }

    /// Checks that both directions agree and every tracked body has a worker.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (b, ws) in &self.workers_of {
            if ws.is_empty() {
                return Err(format!("body {b} has no worker"));
            }
            for w in ws {
                if !self.active[w.index()].contains(b) {
                    return Err(format!("body {b} missing from active set of worker {w}"));
                }
            }
        }
        for (w, set) in self.active.iter().enumerate() {
            for b in set {
                if !self.workers(*b).contains(&WorkerId(w as u32)) {
                    return Err(format!("worker {w} lists body {b} without back-reference"));
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`WorkerAssignment::overlap_set`].
pub fn overlap_set(assignment: &WorkerAssignment) -> BTreeSet<BodyId> {
    assignment.overlap_set()
}
