//! Distributed rigid-body simulation with overlapping worker partitions.
//!
//! A scene is split across workers, each running its own [`dynamics::Engine`] over a subset
//! of the bodies. Bodies on partition interfaces are simulated by several workers at once and
//! their per-worker states are blended each step with weights derived from constraint-graph
//! distances. New contacts between partitions drive incremental load balancing.

pub mod assignment;
pub mod coordinator;
pub mod dynamics;
pub mod graph;
pub mod overlap;
pub mod scene;
pub mod scenes;
pub mod transport;
pub mod types;
pub mod worker;

pub use assignment::{overlap_set, AssignmentError, WorkerAssignment, WorkerSet};
pub use graph::{ConstraintGraph, EdgeDelta, GraphError};
pub use overlap::{BlendWeights, LoadMetric, Mutation, OverlapParams};
pub use scene::{load_scene, Scene, SceneError};
pub use types::{
    BodyId, BodyState, ConstraintId, Contact, JointSpec, PairKey, RigidBody, Shape, WorkerId,
    STATE_LEN,
};
