use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentError, WorkerAssignment, WorkerSet};
use crate::graph::ConstraintGraph;
use crate::types::{BodyId, PairKey, WorkerId};

use super::partition::PartitionError;
use super::{activate_all, deactivate_all, Mutation};

/// How the load of a worker set is measured.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum LoadMetric {
    /// Live count of active bodies.
    #[default]
    Bodies,
    /// Contacts each worker reported on its last step, indexed by worker.
    Contacts(Vec<usize>),
}

impl LoadMetric {
    fn worker(&self, assignment: &WorkerAssignment, w: WorkerId) -> usize {
        match self {
            LoadMetric::Bodies => assignment.load(w),
            LoadMetric::Contacts(counts) => counts.get(w.index()).copied().unwrap_or(0),
        }
    }

    fn set(&self, assignment: &WorkerAssignment, ws: &WorkerSet) -> usize {
        ws.iter().map(|&w| self.worker(assignment, w)).sum()
    }
}

/// Which rule handled a contact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Bodies in disjoint worker sets: the lighter side absorbs its partner.
    Absorb,
    /// A shared body touching a single-worker body drops its other workers.
    Release(BodyId),
    /// Two bodies with the same shared worker set collapse onto the least-loaded worker.
    Collapse(WorkerId),
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Absorb => write!(f, "absorb"),
            Branch::Release(b) => write!(f, "release:{b}"),
            Branch::Collapse(w) => write!(f, "collapse:{w}"),
        }
    }
}

/// Result of processing one new contact, with the inputs the rule saw so it can be audited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceEvent {
    pub contact: PairKey,
    pub branch: Branch,
    pub mutations: Vec<Mutation>,
    /// Worker sets of the two bodies before and after.
    pub before: [WorkerSet; 2],
    pub after: [WorkerSet; 2],
    /// Whether each body was a bridge before the rule ran.
    pub bridge: [bool; 2],
    /// Load of each body's worker set before the rule ran.
    pub set_load: [usize; 2],
    /// Load of every worker in either set before the rule ran.
    #[serde(with = "as_pairs")]
    pub worker_load: BTreeMap<WorkerId, usize>,
}

/// Writes the map as `[[worker, load], ...]` so it survives flattening into other records,
/// which would otherwise turn the integer keys into strings.
mod as_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::types::WorkerId;

    pub fn serialize<S: Serializer>(m: &BTreeMap<WorkerId, usize>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<WorkerId, usize>, D::Error> {
        Ok(Vec::<(WorkerId, usize)>::deserialize(d)?.into_iter().collect())
    }
}

/// Reacts to new contacts by moving bodies between workers.
///
/// `contacts` are pairs that were not touching on the previous step. They are handled in
/// ascending pair order against the live assignment. Pairs with a body outside the graph
/// (statics) are ignored. Returns one event per contact that fired a rule.
pub fn load_balance(
    contacts: &[PairKey],
    gamma: usize,
    g: &ConstraintGraph,
    assignment: &mut WorkerAssignment,
    metric: &LoadMetric,
) -> Result<Vec<BalanceEvent>, PartitionError> {
    let mut pairs: Vec<PairKey> = contacts.to_vec();
    pairs.sort();
    pairs.dedup();
    let mut events = Vec::new();
    for pair in pairs {
        let (a, b) = (pair.0, pair.1);
        if !g.contains(a) || !g.contains(b) || !assignment.contains(a) || !assignment.contains(b) {
            continue;
        }
        let before = [assignment.workers(a).clone(), assignment.workers(b).clone()];
        let bridge = [g.is_bridge(a, assignment), g.is_bridge(b, assignment)];
        let set_load = [metric.set(assignment, &before[0]), metric.set(assignment, &before[1])];
        let worker_load = before[0]
            .union(&before[1])
            .map(|&w| (w, metric.worker(assignment, w)))
            .collect();
        if let Some((branch, mutations)) = balance_pair(a, b, gamma, g, assignment, metric)? {
            debug_assert!(mutations.iter().all(|m| assignment.multiplicity(m.body()) >= 1));
            let after = [assignment.workers(a).clone(), assignment.workers(b).clone()];
            events.push(BalanceEvent {
                contact: pair,
                branch,
                mutations,
                before,
                after,
                bridge,
                set_load,
                worker_load,
            });
        }
    }
    Ok(events)
}

fn balance_pair(
    a: BodyId,
    b: BodyId,
    gamma: usize,
    g: &ConstraintGraph,
    assignment: &mut WorkerAssignment,
    metric: &LoadMetric,
) -> Result<Option<(Branch, Vec<Mutation>)>, PartitionError> {
    let wa = assignment.workers(a).clone();
    let wb = assignment.workers(b).clone();
    let mut log = Vec::new();

    if wa.is_disjoint(&wb) {
        let root = if metric.set(assignment, &wa) <= metric.set(assignment, &wb) {
            activate_all(assignment, b, wa.iter().copied(), &mut log)?;
            b
        } else {
            activate_all(assignment, a, wb.iter().copied(), &mut log)?;
            a
        };
        let union: WorkerSet = wa.union(&wb).copied().collect();
        if gamma > 0 {
            for n in g.bfs_vertices(root, gamma)? {
                if !assignment.contains(n) {
                    continue;
                }
                let missing: Vec<_> = union.difference(assignment.workers(n)).copied().collect();
                activate_all(assignment, n, missing, &mut log)?;
            }
        }
        return Ok(Some((Branch::Absorb, log)));
    }

    if wa.len() > 1 && wb.len() == 1 && !g.is_bridge(a, assignment) {
        release(assignment, a, &wa, &wb, &mut log)?;
        return Ok(Some((Branch::Release(a), log)));
    }
    if wb.len() > 1 && wa.len() == 1 && !g.is_bridge(b, assignment) {
        release(assignment, b, &wb, &wa, &mut log)?;
        return Ok(Some((Branch::Release(b), log)));
    }

    if wa == wb && wa.len() > 1 {
        let s = wa
            .iter()
            .copied()
            .min_by_key(|&w| (metric.worker(assignment, w), w))
            .expect("non-empty worker set");
        let others: Vec<_> = wa.iter().copied().filter(|&w| w != s).collect();
        deactivate_all(assignment, a, others.iter().copied(), &mut log)?;
        deactivate_all(assignment, b, others.iter().copied(), &mut log)?;
        log::debug!("collapsed {a} and {b} onto worker {s}");
        return Ok(Some((Branch::Collapse(s), log)));
    }
    Ok(None)
}

fn release(
    assignment: &mut WorkerAssignment,
    body: BodyId,
    own: &WorkerSet,
    keep: &WorkerSet,
    log: &mut Vec<Mutation>,
) -> Result<(), AssignmentError> {
    let drop: Vec<_> = own.difference(keep).copied().collect();
    deactivate_all(assignment, body, drop, log)
}
