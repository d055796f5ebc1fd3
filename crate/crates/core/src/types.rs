//! Identifiers and the rigid-body domain types shared by every other module.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<u32> for $name {
            fn from(v: u32) -> Self {
                Self(v)
            }
        }
    };
}

id_type!(
    /// Index of a body in the scene. Dense over dynamic and static bodies.
    BodyId
);
id_type!(
    /// Index of a worker, dense in `[0, N)`.
    WorkerId
);
id_type!(
    /// Index of a joint in the scene.
    ConstraintId
);

/// Number of scalars in a serialized [`BodyState`].
pub const STATE_LEN: usize = 13;

/// Generalized state of a rigid body: position, orientation, linear and angular velocity.
///
/// Angular velocity is expressed in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyState {
    pub position: Vector3<f64>,
    pub orientation: Quaternion<f64>,
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
}

impl Default for BodyState {
    fn default() -> Self {
        Self::at_rest(Vector3::zeros())
    }
}

impl BodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: Quaternion::identity(),
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
        }
    }

    /// Flattens to `(x, q_wxyz, xdot, omega)`.
    pub fn to_array(&self) -> [f64; STATE_LEN] {
        let (p, q, v, w) = (
            &self.position,
            &self.orientation,
            &self.lin_vel,
            &self.ang_vel,
        );
        [
            p.x, p.y, p.z, q.w, q.i, q.j, q.k, v.x, v.y, v.z, w.x, w.y, w.z,
        ]
    }

    pub fn from_array(a: &[f64; STATE_LEN]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            orientation: Quaternion::new(a[3], a[4], a[5], a[6]),
            lin_vel: Vector3::new(a[7], a[8], a[9]),
            ang_vel: Vector3::new(a[10], a[11], a[12]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn quaternion_norm_error(&self) -> f64 {
        (self.orientation.norm() - 1.0).abs()
    }

    /// Rotation assuming the stored quaternion is unit length.
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(self.orientation)
    }

    /// World-space position of a point given in the body frame.
    pub fn world_point(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation() * local
    }
}

/// Collision geometry. Planes are only valid on static bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    /// Half-space `{ p : normal · p <= offset }` is solid.
    Plane {
        normal: [f64; 3],
        offset: f64,
    },
}

impl Shape {
    /// Body-frame inertia tensor of a solid primitive of the given mass.
    pub fn inertia(&self, mass: f64) -> Matrix3<f64> {
        match *self {
            Shape::Sphere { radius } => Matrix3::identity() * (0.4 * mass * radius * radius),
            Shape::Box { half_extents: [x, y, z] } => {
                let k = mass / 3.0;
                Matrix3::from_diagonal(&Vector3::new(
                    k * (y * y + z * z),
                    k * (x * x + z * z),
                    k * (x * x + y * y),
                ))
            }
            Shape::Plane { .. } => Matrix3::zeros(),
        }
    }

    /// Radius of a sphere bounding the shape around its center. Infinite for planes.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents: [x, y, z] } => (x * x + y * y + z * z).sqrt(),
            Shape::Plane { .. } => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidBody {
    pub id: BodyId,
    pub shape: Shape,
    /// Zero encodes a static body.
    pub mass: f64,
    /// Body-frame inertia tensor, derived from shape and mass.
    pub inertia: Matrix3<f64>,
    pub friction: f64,
    pub initial_state: BodyState,
    /// Workers the body starts in. Empty for static bodies.
    pub initial_partition: Vec<WorkerId>,
}

impl RigidBody {
    pub fn is_static(&self) -> bool {
        self.mass == 0.0
    }

    pub fn inv_mass(&self) -> f64 {
        if self.is_static() {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    /// Inverse inertia in body frame; zero for static bodies.
    pub fn inv_inertia_body(&self) -> Matrix3<f64> {
        if self.is_static() {
            Matrix3::zeros()
        } else {
            self.inertia.try_inverse().unwrap_or_else(Matrix3::zeros)
        }
    }
}

/// Ball-and-socket joint between two bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub id: ConstraintId,
    pub body_a: BodyId,
    pub body_b: BodyId,
    pub anchor_a: [f64; 3],
    pub anchor_b: [f64; 3],
}

impl JointSpec {
    pub fn anchor_a(&self) -> Vector3<f64> {
        Vector3::from(self.anchor_a)
    }

    pub fn anchor_b(&self) -> Vector3<f64> {
        Vector3::from(self.anchor_b)
    }

    /// World-space distance between the two anchor points.
    pub fn separation(&self, a: &BodyState, b: &BodyState) -> f64 {
        (a.world_point(&self.anchor_a()) - b.world_point(&self.anchor_b())).norm()
    }
}

/// A single contact point. `body_a < body_b`; the normal points from B towards A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub body_a: BodyId,
    pub body_b: BodyId,
    /// Distinguishes multiple contact points between one pair (box corners).
    pub feature: u32,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub depth: f64,
}

impl Contact {
    pub fn pair(&self) -> PairKey {
        PairKey::new(self.body_a, self.body_b)
    }

    pub fn key(&self) -> (BodyId, BodyId, u32) {
        (self.body_a, self.body_b, self.feature)
    }
}

/// Unordered body pair, stored with the smaller id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey(pub BodyId, pub BodyId);

impl PairKey {
    pub fn new(a: BodyId, b: BodyId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }
}
