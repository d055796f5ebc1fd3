//! Scene description and its JSON file format.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BodyId, BodyState, JointSpec, RigidBody, Shape, WorkerId};

pub const DEFAULT_TIMESTEP: f64 = 0.002;
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, -9.81, 0.0];

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SceneError> {
    Err(SceneError::Invalid(msg.into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gravity: Vector3<f64>,
    pub timestep: f64,
    /// Indexed by `BodyId`.
    pub bodies: Vec<RigidBody>,
    pub joints: Vec<JointSpec>,
    pub num_workers: u32,
}

impl Scene {
    pub fn body(&self, id: BodyId) -> &RigidBody {
        &self.bodies[id.index()]
    }

    pub fn contains(&self, id: BodyId) -> bool {
        id.index() < self.bodies.len()
    }

    /// Ids of all non-static bodies.
    pub fn dynamic_ids(&self) -> impl Iterator<Item = BodyId> + '_ {
        self.bodies.iter().filter(|b| !b.is_static()).map(|b| b.id)
    }

    pub fn initial_states(&self) -> Vec<BodyState> {
        self.bodies.iter().map(|b| b.initial_state).collect()
    }

    /// Diagonal of the axis-aligned box enclosing the initial positions of dynamic bodies.
    pub fn bounding_diagonal(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for b in self.bodies.iter().filter(|b| !b.is_static()) {
            let r = b.shape.bounding_radius();
            let p = b.initial_state.position;
            lo = lo.inf(&(p - Vector3::repeat(r)));
            hi = hi.sup(&(p + Vector3::repeat(r)));
        }
        let d = (hi - lo).norm();
        if d.is_finite() && d > 0.0 {
            d
        } else {
            1.0
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        file.into_scene()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from_scene(self)).expect("scene serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Reads and validates a scene file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    Scene::from_json(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum PartitionLabel {
    Single(u32),
    Many(Vec<u32>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BodyFile {
    id: u32,
    shape: Shape,
    mass: f64,
    #[serde(default)]
    friction: f64,
    position: [f64; 3],
    #[serde(default = "identity_quat")]
    quaternion: [f64; 4],
    #[serde(default)]
    lin_vel: [f64; 3],
    #[serde(default)]
    ang_vel: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    partition: Option<PartitionLabel>,
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn default_gravity() -> [f64; 3] {
    DEFAULT_GRAVITY
}

fn default_timestep() -> f64 {
    DEFAULT_TIMESTEP
}

fn default_workers() -> u32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SceneFile {
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    #[serde(default = "default_timestep")]
    timestep_s: f64,
    #[serde(default)]
    bodies: Vec<BodyFile>,
    #[serde(default)]
    joints: Vec<JointSpec>,
    #[serde(default = "default_workers")]
    num_workers: u32,
}

impl SceneFile {
    fn into_scene(self) -> Result<Scene, SceneError> {
        if !(self.timestep_s > 0.0 && self.timestep_s.is_finite()) {
            return invalid(format!("timestep_s must be positive, got {}", self.timestep_s));
        }
        if self.num_workers == 0 {
            return invalid("num_workers must be at least 1");
        }
        let n = self.bodies.len();
        let mut slots: Vec<Option<RigidBody>> = vec![None; n];
        for b in self.bodies {
            let idx = b.id as usize;
            if idx >= n {
                return invalid(format!("body id {} outside dense range [0, {n})", b.id));
            }
            if slots[idx].is_some() {
                return invalid(format!("duplicate body id {}", b.id));
            }
            slots[idx] = Some(body_from_file(b, self.num_workers)?);
        }
        let bodies: Vec<RigidBody> = slots.into_iter().map(|b| b.expect("dense ids")).collect();

        let mut joint_ids = BTreeSet::new();
        for j in &self.joints {
            if !joint_ids.insert(j.id) {
                return invalid(format!("duplicate joint id {}", j.id));
            }
            if j.body_a == j.body_b {
                return invalid(format!("joint {} connects body {} to itself", j.id, j.body_a));
            }
            for b in [j.body_a, j.body_b] {
                if b.index() >= n {
                    return invalid(format!("joint {} references unknown body {b}", j.id));
                }
            }
            if bodies[j.body_a.index()].is_static() && bodies[j.body_b.index()].is_static() {
                return invalid(format!("joint {} connects two static bodies", j.id));
            }
        }

        Ok(Scene {
            gravity: Vector3::from(self.gravity),
            timestep: self.timestep_s,
            bodies,
            joints: self.joints,
            num_workers: self.num_workers,
        })
    }

    fn from_scene(scene: &Scene) -> Self {
        let bodies = scene
            .bodies
            .iter()
            .map(|b| {
                let s = b.initial_state.to_array();
                let partition = match b.initial_partition.as_slice() {
                    [] => None,
                    [w] => Some(PartitionLabel::Single(w.0)),
                    ws => Some(PartitionLabel::Many(ws.iter().map(|w| w.0).collect())),
                };
                BodyFile {
                    id: b.id.0,
                    shape: b.shape.clone(),
                    mass: b.mass,
                    friction: b.friction,
                    position: [s[0], s[1], s[2]],
                    quaternion: [s[3], s[4], s[5], s[6]],
                    lin_vel: [s[7], s[8], s[9]],
                    ang_vel: [s[10], s[11], s[12]],
                    partition,
                }
            })
            .collect();
        SceneFile {
            gravity: scene.gravity.into(),
            timestep_s: scene.timestep,
            bodies,
            joints: scene.joints.clone(),
            num_workers: scene.num_workers,
        }
    }
}

fn body_from_file(b: BodyFile, num_workers: u32) -> Result<RigidBody, SceneError> {
    let id = BodyId(b.id);
    if !(b.mass >= 0.0 && b.mass.is_finite()) {
        return invalid(format!("body {id}: mass must be finite and >= 0"));
    }
    if !(b.friction >= 0.0 && b.friction.is_finite()) {
        return invalid(format!("body {id}: friction must be finite and >= 0"));
    }
    let q = Quaternion::new(b.quaternion[0], b.quaternion[1], b.quaternion[2], b.quaternion[3]);
    if (q.norm() - 1.0).abs() > UNIT_TOL {
        return invalid(format!("body {id}: quaternion {:?} is not unit length", b.quaternion));
    }
    match b.shape {
        Shape::Sphere { radius } if !(radius > 0.0) => {
            return invalid(format!("body {id}: sphere radius must be positive"))
        }
        Shape::Box { half_extents } if half_extents.iter().any(|h| !(*h > 0.0)) => {
            return invalid(format!("body {id}: box half extents must be positive"))
        }
        Shape::Plane { normal, .. } => {
            if b.mass != 0.0 {
                return invalid(format!("body {id}: planes must be static (mass 0)"));
            }
            if (Vector3::from(normal).norm() - 1.0).abs() > UNIT_TOL {
                return invalid(format!("body {id}: plane normal is not unit length"));
            }
        }
        _ => {}
    }
    let state = BodyState {
        position: Vector3::from(b.position),
        orientation: q,
        lin_vel: Vector3::from(b.lin_vel),
        ang_vel: Vector3::from(b.ang_vel),
    };
    if !state.is_finite() {
        return invalid(format!("body {id}: non-finite state"));
    }
    let is_static = b.mass == 0.0;
    let initial_partition: Vec<WorkerId> = match (&b.partition, is_static) {
        (_, true) => Vec::new(),
        (None, false) => return invalid(format!("body {id}: dynamic body has no partition label")),
        (Some(PartitionLabel::Single(w)), false) => vec![WorkerId(*w)],
        (Some(PartitionLabel::Many(ws)), false) => {
            let set: BTreeSet<u32> = ws.iter().copied().collect();
            if set.is_empty() {
                return invalid(format!("body {id}: empty partition list"));
            }
            set.into_iter().map(WorkerId).collect()
        }
    };
    if let Some(w) = initial_partition.iter().find(|w| w.0 >= num_workers) {
        return invalid(format!(
            "body {id}: partition label {w} is not a worker in [0, {num_workers})"
        ));
    }
    let inertia = b.shape.inertia(b.mass);
    Ok(RigidBody {
        id,
        shape: b.shape,
        mass: b.mass,
        inertia,
        friction: b.friction,
        initial_state: state,
        initial_partition,
    })
}

/// Relabels every dynamic body so the list is split into `num_workers` contiguous chunks of
/// near-equal size, in body-id order.
pub fn divide_equally(scene: &mut Scene, num_workers: u32) {
    assert!(num_workers >= 1);
    scene.num_workers = num_workers;
    let dynamic: Vec<BodyId> = scene.dynamic_ids().collect();
    let n = dynamic.len();
    for (k, id) in dynamic.into_iter().enumerate() {
        let w = (k * num_workers as usize) / n.max(1);
        scene.bodies[id.index()].initial_partition = vec![WorkerId(w as u32)];
    }
}
