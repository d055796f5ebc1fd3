//! Scene generators: hanging chain, plank bridge, sphere bowl and a pillar field with
//! projectiles. Each returns a validated scene with spatially partitioned labels.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{Scene, DEFAULT_GRAVITY, DEFAULT_TIMESTEP};
use crate::types::{BodyId, BodyState, ConstraintId, JointSpec, RigidBody, Shape, WorkerId};

/// Incremental scene construction with dense ids.
#[derive(Clone, Debug)]
pub struct SceneBuilder {
    scene: Scene,
}

impl SceneBuilder {
    pub fn new(num_workers: u32) -> Self {
        Self {
            scene: Scene {
                gravity: Vector3::from(DEFAULT_GRAVITY),
                timestep: DEFAULT_TIMESTEP,
                bodies: Vec::new(),
                joints: Vec::new(),
                num_workers: num_workers.max(1),
            },
        }
    }

    pub fn add_static(&mut self, shape: Shape, state: BodyState) -> BodyId {
        self.push(shape, 0.0, 0.0, state, Vec::new())
    }

    pub fn add_dynamic(
        &mut self,
        shape: Shape,
        mass: f64,
        friction: f64,
        state: BodyState,
        worker: u32,
    ) -> BodyId {
        assert!(mass > 0.0);
        self.push(shape, mass, friction, state, vec![WorkerId(worker)])
    }

    fn push(
        &mut self,
        shape: Shape,
        mass: f64,
        friction: f64,
        state: BodyState,
        partition: Vec<WorkerId>,
    ) -> BodyId {
        let id = BodyId(self.scene.bodies.len() as u32);
        self.scene.bodies.push(RigidBody {
            id,
            inertia: shape.inertia(mass),
            shape,
            mass,
            friction,
            initial_state: state,
            initial_partition: partition,
        });
        id
    }

    pub fn joint(&mut self, a: BodyId, b: BodyId, anchor_a: [f64; 3], anchor_b: [f64; 3]) {
        let id = ConstraintId(self.scene.joints.len() as u32);
        self.scene.joints.push(JointSpec { id, body_a: a, body_b: b, anchor_a, anchor_b });
    }

    pub fn build(self) -> Scene {
        self.scene
    }
}

/// Relabels dynamic bodies into `num_workers` equal-count slabs along the axis with the
/// largest spread of initial positions. Ties in position keep id order.
pub fn partition_spatially(scene: &mut Scene, num_workers: u32) {
    let num_workers = num_workers.max(1);
    scene.num_workers = num_workers;
    let ids: Vec<BodyId> = scene.dynamic_ids().collect();
    if ids.is_empty() {
        return;
    }
    let pos = |id: BodyId| scene.body(id).initial_state.position;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &id in &ids {
        lo = lo.inf(&pos(id));
        hi = hi.sup(&pos(id));
    }
    let axis = (hi - lo).imax();
    let mut order = ids.clone();
    order.sort_by(|a, b| pos(*a)[axis].total_cmp(&pos(*b)[axis]).then(a.cmp(b)));
    let n = order.len();
    for (k, id) in order.into_iter().enumerate() {
        let w = (k * num_workers as usize) / n;
        scene.bodies[id.index()].initial_partition = vec![WorkerId(w as u32)];
    }
}

fn at(x: f64, y: f64, z: f64) -> BodyState {
    BodyState::at_rest(Vector3::new(x, y, z))
}

/// Link spacing of [`hanging_chain`].
pub const CHAIN_LINK_LENGTH: f64 = 0.25;

/// Sphere links hanging from a static block, released horizontally so the chain swings.
///
/// Body 0 is the anchor; links are bodies `1..=links`, split into contiguous runs per worker.
pub fn hanging_chain(links: usize, num_workers: u32) -> Scene {
    let l = CHAIN_LINK_LENGTH;
    let height = 2.0;
    let mut b = SceneBuilder::new(num_workers);
    let anchor = b.add_static(Shape::Box { half_extents: [0.05; 3] }, at(0.0, height, 0.0));
    let mut prev = anchor;
    for i in 1..=links {
        let w = ((i - 1) * num_workers as usize / links.max(1)) as u32;
        let id = b.add_dynamic(
            Shape::Sphere { radius: 0.08 },
            1.0,
            0.3,
            at(i as f64 * l, height, 0.0),
            w,
        );
        b.joint(prev, id, [l / 2.0, 0.0, 0.0], [-l / 2.0, 0.0, 0.0]);
        prev = id;
    }
    b.build()
}

/// Plank spacing of [`bridge`].
pub const BRIDGE_PITCH: f64 = 0.22;

/// Planks hinged edge to edge (two ball joints per edge) between two static posts that sit
/// closer together than the plank run is long, so the bridge starts in a V and sags.
pub fn bridge(planks: usize, num_workers: u32) -> Scene {
    assert!(planks >= 2);
    let p = BRIDGE_PITCH;
    let slack: f64 = 0.85;
    let theta = slack.acos();
    let height = 3.0;
    let hinge_z = 0.3;
    let mut b = SceneBuilder::new(num_workers);
    let span = slack * p * planks as f64;
    let post = Shape::Box { half_extents: [0.05, 0.05, 0.5] };
    let left = b.add_static(post.clone(), at(0.0, height, 0.0));
    let right = b.add_static(post, at(span, height, 0.0));

    let down = planks / 2;
    let mut edge = Vector3::new(0.0, height, 0.0);
    let mut ids = Vec::with_capacity(planks);
    for i in 0..planks {
        let angle = if i < down { -theta } else { theta };
        let dir = Vector3::new(angle.cos(), angle.sin(), 0.0);
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
        let state = BodyState {
            position: edge + dir * (p / 2.0),
            orientation: *rot.quaternion(),
            ..BodyState::default()
        };
        edge += dir * p;
        let id = b.add_dynamic(Shape::Box { half_extents: [0.1, 0.025, 0.4] }, 1.0, 0.5, state, 0);
        ids.push(id);
    }
    for z in [-hinge_z, hinge_z] {
        b.joint(left, ids[0], [0.0, 0.0, z], [-p / 2.0, 0.0, z]);
        for w in ids.windows(2) {
            b.joint(w[0], w[1], [p / 2.0, 0.0, z], [-p / 2.0, 0.0, z]);
        }
        b.joint(ids[planks - 1], right, [p / 2.0, 0.0, z], [0.0, 0.0, z]);
    }
    let mut scene = b.build();
    partition_spatially(&mut scene, num_workers);
    scene
}

/// Spheres dropped in a grid (with seeded jitter) into a bowl made of a floor and four
/// inward-leaning walls.
pub fn bowl(spheres: usize, num_workers: u32, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 0.1;
    let spacing = 0.25;
    let per_side = ((spheres as f64 / 6.0).sqrt().ceil() as usize).max(2);
    let half = per_side as f64 * spacing / 2.0;
    let mut b = SceneBuilder::new(num_workers);
    b.add_static(Shape::Plane { normal: [0.0, 1.0, 0.0], offset: 0.0 }, at(0.0, 0.0, 0.0));
    let s = FRAC_1_SQRT_2;
    let wall = half + 0.1;
    for (nx, nz) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
        // passes through (-nx * wall, 0, -nz * wall), leaning outwards at 45 degrees
        b.add_static(
            Shape::Plane { normal: [nx * s, s, nz * s], offset: -wall * s },
            at(-nx * wall, 0.0, -nz * wall),
        );
    }
    for k in 0..spheres {
        let layer = k / (per_side * per_side);
        let cell = k % (per_side * per_side);
        let (i, j) = (cell / per_side, cell % per_side);
        let x = -half + spacing * (i as f64 + 0.5) + rng.gen_range(-0.02..0.02);
        let z = -half + spacing * (j as f64 + 0.5) + rng.gen_range(-0.02..0.02);
        let y = r + 0.05 + spacing * layer as f64;
        b.add_dynamic(Shape::Sphere { radius: r }, 1.0, 0.4, at(x, y, z), 0);
    }
    let mut scene = b.build();
    partition_spatially(&mut scene, num_workers);
    scene
}

/// A grid of free-standing box pillars on the ground with heavy spheres fired into them.
/// Pillars are spaced so that boxes never touch each other before being knocked over.
pub fn building(rows: usize, cols: usize, projectiles: usize, num_workers: u32, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = SceneBuilder::new(num_workers);
    b.add_static(Shape::Plane { normal: [0.0, 1.0, 0.0], offset: 0.0 }, at(0.0, 0.0, 0.0));
    let h = [0.1, 0.4, 0.1];
    for i in 0..rows {
        for j in 0..cols {
            let x = i as f64 * 0.6;
            let z = j as f64 * 0.6;
            b.add_dynamic(Shape::Box { half_extents: h }, 2.0, 0.6, at(x, h[1], z), 0);
        }
    }
    for k in 0..projectiles {
        // one lane per pillar column, later shots queued further back
        let z = (k % cols.max(1)) as f64 * 0.6 + rng.gen_range(-0.1..0.1);
        let x = -2.0 - 0.8 * (k / cols.max(1)) as f64;
        let mut s = at(x, rng.gen_range(0.3..0.7), z);
        s.lin_vel = Vector3::new(rng.gen_range(6.0..10.0), 2.0, 0.0);
        b.add_dynamic(Shape::Sphere { radius: 0.15 }, 5.0, 0.4, s, 0);
    }
    let mut scene = b.build();
    partition_spatially(&mut scene, num_workers);
    scene
}
