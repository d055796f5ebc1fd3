//! Constraint graph over dynamic bodies and the neighborhood queries the overlap
//! algorithms run on it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::assignment::{WorkerAssignment, WorkerSet};
use crate::scene::Scene;
use crate::types::{BodyId, Contact, PairKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("body {0} is not a vertex of the constraint graph")]
    UnknownVertex(BodyId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Joint,
    Contact,
}

/// Adjacency changes produced by a contact update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeDelta {
    pub added: Vec<PairKey>,
    pub removed: Vec<PairKey>,
}

impl EdgeDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }

    pub fn endpoints(&self) -> impl Iterator<Item = BodyId> + '_ {
        self.added
            .iter()
            .chain(self.removed.iter())
            .flat_map(|p| [p.0, p.1])
    }
}

/// Undirected graph: vertices are dynamic bodies, edges are joints and current contacts.
///
/// Joint edges are fixed at construction. Contact edges are replaced wholesale on each
/// [`ConstraintGraph::update_contacts`]. Neighbor iteration is in ascending id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintGraph {
    vertices: BTreeSet<BodyId>,
    statics: BTreeSet<BodyId>,
    joint_edges: BTreeMap<PairKey, u32>,
    contact_edges: BTreeSet<PairKey>,
    adjacency: BTreeMap<BodyId, BTreeSet<BodyId>>,
}

impl ConstraintGraph {
    pub fn new(vertices: impl IntoIterator<Item = BodyId>) -> Self {
        let vertices: BTreeSet<BodyId> = vertices.into_iter().collect();
        let adjacency = vertices.iter().map(|&v| (v, BTreeSet::new())).collect();
        Self {
            vertices,
            statics: BTreeSet::new(),
            joint_edges: BTreeMap::new(),
            contact_edges: BTreeSet::new(),
            adjacency,
        }
    }

    /// Graph of a scene: dynamic bodies with their joint edges. Joints to static bodies add no edge.
    pub fn from_scene(scene: &Scene) -> Self {
        let mut g = Self::new(scene.dynamic_ids());
        g.statics = scene
            .bodies
            .iter()
            .filter(|b| b.is_static())
            .map(|b| b.id)
            .collect();
        for j in &scene.joints {
            if g.contains(j.body_a) && g.contains(j.body_b) {
                g.add_joint_edge(j.body_a, j.body_b)
                    .expect("both endpoints are vertices");
            }
        }
        g
    }

    /// Marks ids as known static bodies so contacts with them are ignored rather than rejected.
    pub fn with_statics(mut self, statics: impl IntoIterator<Item = BodyId>) -> Self {
        self.statics.extend(statics);
        self
    }

    pub fn add_joint_edge(&mut self, a: BodyId, b: BodyId) -> Result<(), GraphError> {
        self.require(a)?;
        self.require(b)?;
        if a == b {
            return Ok(());
        }
        *self.joint_edges.entry(PairKey::new(a, b)).or_insert(0) += 1;
        self.link(a, b);
        Ok(())
    }

    fn link(&mut self, a: BodyId, b: BodyId) {
        self.adjacency.get_mut(&a).expect("vertex").insert(b);
        self.adjacency.get_mut(&b).expect("vertex").insert(a);
    }

    fn unlink(&mut self, a: BodyId, b: BodyId) {
        self.adjacency.get_mut(&a).expect("vertex").remove(&b);
        self.adjacency.get_mut(&b).expect("vertex").remove(&a);
    }

    fn require(&self, v: BodyId) -> Result<(), GraphError> {
        if self.vertices.contains(&v) {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    pub fn contains(&self, v: BodyId) -> bool {
        self.vertices.contains(&v)
    }

    pub fn vertices(&self) -> impl Iterator<Item = BodyId> + '_ {
        self.vertices.iter().copied()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// All edges currently present, each unordered pair once.
    pub fn edges(&self) -> BTreeSet<PairKey> {
        self.joint_edges
            .keys()
            .chain(self.contact_edges.iter())
            .copied()
            .collect()
    }

    pub fn edge_kind(&self, a: BodyId, b: BodyId) -> Option<EdgeKind> {
        let key = PairKey::new(a, b);
        if self.joint_edges.contains_key(&key) {
            Some(EdgeKind::Joint)
        } else if self.contact_edges.contains(&key) {
            Some(EdgeKind::Contact)
        } else {
            None
        }
    }

    pub fn joint_edges(&self) -> impl Iterator<Item = PairKey> + '_ {
        self.joint_edges.keys().copied()
    }

    pub fn contact_edges(&self) -> &BTreeSet<PairKey> {
        &self.contact_edges
    }

    pub fn neighbors(&self, v: BodyId) -> Result<&BTreeSet<BodyId>, GraphError> {
        self.adjacency.get(&v).ok_or(GraphError::UnknownVertex(v))
    }

    /// Replaces all contact edges with those of `contacts`. Contacts touching a static body
    /// contribute nothing; contacts naming an unknown body are rejected without modifying
    /// the graph.
    pub fn update_contacts(&mut self, contacts: &[Contact]) -> Result<EdgeDelta, GraphError> {
        let pairs: Vec<PairKey> = contacts.iter().map(|c| c.pair()).collect();
        self.set_contact_pairs(&pairs)
    }

    /// Pair-keyed form of [`update_contacts`](Self::update_contacts).
    pub fn set_contact_pairs(&mut self, pairs: &[PairKey]) -> Result<EdgeDelta, GraphError> {
        let mut next = BTreeSet::new();
        for p in pairs {
            let mut dynamic = true;
            for v in [p.0, p.1] {
                if self.statics.contains(&v) {
                    dynamic = false;
                } else {
                    self.require(v)?;
                }
            }
            if dynamic && p.0 != p.1 {
                next.insert(*p);
            }
        }

        let mut delta = EdgeDelta::default();
        let old = std::mem::take(&mut self.contact_edges);
        for key in old.difference(&next) {
            if !self.joint_edges.contains_key(key) {
                self.unlink(key.0, key.1);
                delta.removed.push(*key);
            }
        }
        for key in next.difference(&old) {
            if !self.joint_edges.contains_key(key) {
                self.link(key.0, key.1);
                delta.added.push(*key);
            }
        }
        self.contact_edges = next;
        Ok(delta)
    }

    /// Hop distances from `root` to every vertex within `max_depth`, root included at 0.
    pub fn bfs_distances(
        &self,
        root: BodyId,
        max_depth: usize,
    ) -> Result<BTreeMap<BodyId, usize>, GraphError> {
        self.require(root)?;
        let mut dist = BTreeMap::new();
        dist.insert(root, 0);
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            if d == max_depth {
                continue;
            }
            for &n in &self.adjacency[&v] {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(n) {
                    e.insert(d + 1);
                    queue.push_back(n);
                }
            }
        }
        Ok(dist)
    }

    /// Vertices within `depth` hops of any root, roots included. Unknown roots are skipped.
    pub fn within(&self, roots: impl IntoIterator<Item = BodyId>, depth: usize) -> BTreeSet<BodyId> {
        let mut seen = BTreeSet::new();
        let mut frontier = Vec::new();
        for r in roots {
            if self.vertices.contains(&r) && seen.insert(r) {
                frontier.push(r);
            }
        }
        for _ in 0..depth {
            let mut next = Vec::new();
            for v in frontier {
                for &n in &self.adjacency[&v] {
                    if seen.insert(n) {
                        next.push(n);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen
    }

    /// Vertices at hop distance `1..=depth` from `root`.
    pub fn bfs_vertices(&self, root: BodyId, depth: usize) -> Result<BTreeSet<BodyId>, GraphError> {
        let mut d = self.bfs_distances(root, depth)?;
        d.remove(&root);
        Ok(d.into_keys().collect())
    }

    /// Shortest path length in edges, or `None` when disconnected.
    pub fn geodesic(&self, a: BodyId, b: BodyId) -> Result<Option<usize>, GraphError> {
        self.geodesic_within(a, b, usize::MAX)
    }

    /// Like [`geodesic`](Self::geodesic) but gives up beyond `max_depth` hops.
    pub fn geodesic_within(
        &self,
        a: BodyId,
        b: BodyId,
        max_depth: usize,
    ) -> Result<Option<usize>, GraphError> {
        self.require(b)?;
        self.require(a)?;
        if a == b {
            return Ok(Some(0));
        }
        let mut seen = BTreeSet::from([a]);
        let mut frontier = vec![a];
        let mut depth = 0;
        while !frontier.is_empty() && depth < max_depth {
            depth += 1;
            let mut next = Vec::new();
            for v in frontier {
                for &n in &self.adjacency[&v] {
                    if n == b {
                        return Ok(Some(depth));
                    }
                    if seen.insert(n) {
                        next.push(n);
                    }
                }
            }
            frontier = next;
        }
        Ok(None)
    }

    /// A body is a bridge when its neighbors together live in more than one worker.
    pub fn is_bridge(&self, b: BodyId, assignment: &WorkerAssignment) -> bool {
        let Some(neighbors) = self.adjacency.get(&b) else {
            return false;
        };
        let mut union = WorkerSet::new();
        for n in neighbors {
            union.extend(assignment.workers(*n));
            if union.len() > 1 {
                return true;
            }
        }
        false
    }

    /// Line-oriented adjacency dump: `id: n1 n2 ...`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (v, ns) in &self.adjacency {
            let _ = write!(out, "{v}:");
            for n in ns {
                let _ = write!(out, " {n}");
            }
            out.push('\n');
        }
        out
    }
}

/// Returns a copy of `g` with its contact edges replaced by those of `contacts`.
pub fn update_constraint_graph(
    g: &ConstraintGraph,
    contacts: &[Contact],
) -> Result<ConstraintGraph, GraphError> {
    let mut next = g.clone();
    next.update_contacts(contacts)?;
    Ok(next)
}

pub fn bfs_vertices(
    g: &ConstraintGraph,
    root: BodyId,
    depth: usize,
) -> Result<BTreeSet<BodyId>, GraphError> {
    g.bfs_vertices(root, depth)
}

pub fn geodesic(g: &ConstraintGraph, a: BodyId, b: BodyId) -> Result<Option<usize>, GraphError> {
    g.geodesic(a, b)
}

pub fn bridge(g: &ConstraintGraph, b: BodyId, assignment: &WorkerAssignment) -> bool {
    g.is_bridge(b, assignment)
}

#[cfg(test)]
pub(crate) fn chain(n: u32) -> ConstraintGraph {
    let mut g = ConstraintGraph::new((1..=n).map(BodyId));
    for i in 1..n {
        g.add_joint_edge(BodyId(i), BodyId(i + 1)).unwrap();
    }
    g
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;
    use proptest::prelude::*;

    use super::*;
    use crate::types::WorkerId;

    fn ids(v: &[u32]) -> BTreeSet<BodyId> {
        v.iter().copied().map(BodyId).collect()
    }

    fn contact(a: u32, b: u32) -> Contact {
        Contact {
            body_a: BodyId(a.min(b)),
            body_b: BodyId(a.max(b)),
            feature: 0,
            point: Vector3::zeros(),
            normal: Vector3::y(),
            depth: 0.0,
        }
    }

    /// Floyd-Warshall over an explicit edge list.
    fn all_pairs(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<usize>>> {
        let mut d = vec![vec![None; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = Some(0);
        }
        for &(a, b) in edges {
            if a != b {
                d[a][b] = Some(1);
                d[b][a] = Some(1);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                        if d[i][j].map_or(true, |c| x + y < c) {
                            d[i][j] = Some(x + y);
                        }
                    }
                }
            }
        }
        d
    }

    #[test]
    fn bfs_on_chain() {
        let g = chain(6);
        assert_eq!(g.bfs_vertices(BodyId(3), 1).unwrap(), ids(&[2, 4]));
        assert_eq!(g.bfs_vertices(BodyId(3), 2).unwrap(), ids(&[1, 2, 4, 5]));
        assert!(g.bfs_vertices(BodyId(3), 0).unwrap().is_empty());
    }

    #[test]
    fn isolated_vertex_has_empty_neighborhood() {
        let g = ConstraintGraph::new([BodyId(0)]);
        assert!(g.bfs_vertices(BodyId(0), 5).unwrap().is_empty());
        assert_eq!(g.bfs_vertices(BodyId(1), 1), Err(GraphError::UnknownVertex(BodyId(1))));
    }

    #[test]
    fn geodesic_on_chain_and_components() {
        let g = chain(6);
        assert_eq!(g.geodesic(BodyId(1), BodyId(2)).unwrap(), Some(1));
        assert_eq!(g.geodesic(BodyId(1), BodyId(6)).unwrap(), Some(5));
        let mut g2 = ConstraintGraph::new((0..4).map(BodyId));
        g2.add_joint_edge(BodyId(0), BodyId(1)).unwrap();
        g2.add_joint_edge(BodyId(2), BodyId(3)).unwrap();
        assert_eq!(g2.geodesic(BodyId(0), BodyId(3)).unwrap(), None);
        assert!(g2.geodesic(BodyId(0), BodyId(9)).is_err());
    }

    #[test]
    fn contact_update_replaces_contact_edges_only() {
        let mut g = chain(4);
        g.update_contacts(&[]).unwrap();
        assert_eq!(g.edges().len(), 3);

        let mut g = ConstraintGraph::new((1..=3).map(BodyId));
        g.update_contacts(&[contact(1, 2), contact(2, 3)]).unwrap();
        assert_eq!(g.edges().len(), 2);
        let delta = g.update_contacts(&[contact(2, 3)]).unwrap();
        assert_eq!(g.edges(), [PairKey::new(BodyId(2), BodyId(3))].into());
        assert_eq!(delta.removed, vec![PairKey::new(BodyId(1), BodyId(2))]);
        assert!(delta.added.is_empty());
    }

    #[test]
    fn contact_on_joint_edge_does_not_change_adjacency() {
        let mut g = chain(3);
        let delta = g.update_contacts(&[contact(1, 2)]).unwrap();
        assert!(delta.is_empty());
        let delta = g.update_contacts(&[]).unwrap();
        assert!(delta.is_empty());
        assert_eq!(g.edge_kind(BodyId(1), BodyId(2)), Some(EdgeKind::Joint));
    }

    #[test]
    fn static_contacts_add_no_edge() {
        let mut g = ConstraintGraph::new([BodyId(1)]).with_statics([BodyId(0)]);
        g.update_contacts(&[contact(0, 1)]).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn unknown_contact_body_is_error_and_graph_unchanged() {
        let mut g = chain(3);
        g.update_contacts(&[contact(2, 3)]).unwrap();
        let before = g.clone();
        assert_eq!(
            g.update_contacts(&[contact(1, 9)]),
            Err(GraphError::UnknownVertex(BodyId(9)))
        );
        assert_eq!(g, before);
    }

    #[test]
    fn bridge_cases() {
        // A(1)=red only, B(2) overlap, C(3)=green only
        let mut g = ConstraintGraph::new((1..=4).map(BodyId));
        let mut asg = WorkerAssignment::new(2);
        for (b, ws) in [(1, vec![0]), (2, vec![0, 1]), (3, vec![1]), (4, vec![0])] {
            asg.set_workers(BodyId(b), ws.into_iter().map(WorkerId).collect());
        }
        g.update_contacts(&[contact(1, 2), contact(2, 3)]).unwrap();
        assert!(g.is_bridge(BodyId(2), &asg), "touching both sides");
        g.update_contacts(&[contact(1, 2)]).unwrap();
        assert!(!g.is_bridge(BodyId(2), &asg), "touching only red");
        assert!(!g.is_bridge(BodyId(4), &asg), "no neighbors");
    }

    #[test]
    fn dump_format() {
        let g = chain(3);
        assert_eq!(g.dump(), "1: 2\n2: 1 3\n3: 2\n");
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..30).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..60)))
    }

    fn build(n: usize, edges: &[(usize, usize)]) -> ConstraintGraph {
        let mut g = ConstraintGraph::new((0..n as u32).map(BodyId));
        for &(a, b) in edges {
            g.add_joint_edge(BodyId(a as u32), BodyId(b as u32)).unwrap();
        }
        g
    }

    #[test]
    fn within_is_union_of_balls() {
        let g = chain(10);
        let got = g.within([BodyId(2), BodyId(9), BodyId(42)], 1);
        let want: BTreeSet<BodyId> = [1, 2, 3, 8, 9, 10].into_iter().map(BodyId).collect();
        assert_eq!(got, want);
        assert_eq!(g.within([BodyId(5)], 0), BTreeSet::from([BodyId(5)]));
    }

    proptest! {
        #[test]
        fn geodesic_matches_floyd_warshall((n, edges) in arb_graph()) {
            let g = build(n, &edges);
            let oracle = all_pairs(n, &edges);
            for i in 0..n {
                for j in 0..n {
                    let got = g.geodesic(BodyId(i as u32), BodyId(j as u32)).unwrap();
                    prop_assert_eq!(got, oracle[i][j]);
                    prop_assert_eq!(got, g.geodesic(BodyId(j as u32), BodyId(i as u32)).unwrap());
                }
            }
        }

        #[test]
        fn bfs_vertices_match_oracle_and_nest((n, edges) in arb_graph(), root in 0usize..30, depth in 0usize..6) {
            let root = root % n;
            let g = build(n, &edges);
            let oracle = all_pairs(n, &edges);
            let expected: BTreeSet<BodyId> = (0..n)
                .filter(|&j| matches!(oracle[root][j], Some(d) if d >= 1 && d <= depth))
                .map(|j| BodyId(j as u32))
                .collect();
            let got = g.bfs_vertices(BodyId(root as u32), depth).unwrap();
            prop_assert_eq!(&got, &expected);
            let bigger = g.bfs_vertices(BodyId(root as u32), depth + 1).unwrap();
            prop_assert!(got.is_subset(&bigger));
        }

        #[test]
        fn bridge_false_when_neighbors_share_one_worker(
            (n, edges) in arb_graph(), own in prop::collection::btree_set(0u32..3, 1..3)
        ) {
            let g = build(n, &edges);
            let mut asg = WorkerAssignment::new(3);
            for v in 0..n as u32 {
                if v == 0 {
                    asg.set_workers(BodyId(v), own.iter().copied().map(WorkerId).collect());
                } else {
                    asg.set_workers(BodyId(v), [WorkerId(2)].into());
                }
            }
            // vertex 0's neighbors all sit in worker 2 only
            prop_assert!(!g.is_bridge(BodyId(0), &asg));
        }
    }
}
