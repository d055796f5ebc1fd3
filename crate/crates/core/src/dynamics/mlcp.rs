//! Assembly of the boxed MLCP `A λ = b`, `lo <= λ <= hi` for one timestep.
//!
//! `A = J M⁻¹ Jᵀ + C` with `C = εI`, and `b = -(erp/h) φ - J M⁻¹ p` where `p = M v + h f`.
//! The matrix is kept in factored form (Jacobian rows plus `M⁻¹ Jᵀ`) so its cost scales with
//! the number of constraints; [`MlcpProblem::dense_a`] materializes it for checking.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::types::{BodyId, BodyState, ConstraintId, Contact, JointSpec, RigidBody};

/// Solver and stabilization settings shared by assembly and PGS.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Diagonal compliance ε of `C = εI`.
    pub compliance: f64,
    /// Fraction of the position error removed per step for joints.
    pub joint_erp: f64,
    /// Fraction of the penetration (beyond `slop`) removed per step for contacts.
    pub contact_erp: f64,
    /// Penetration depth tolerated without positional correction, meters.
    pub slop: f64,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-10,
            compliance: 1e-9,
            joint_erp: 1.0,
            contact_erp: 1.0,
            slop: 0.005,
            warm_start: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RowKind {
    Bilateral,
    ContactNormal,
    /// Box-bounded by `±mu * λ[normal_row]`.
    Friction { normal_row: usize, mu: f64 },
}

/// One constraint row touching at most two bodies.
///
/// `j_*` are the linear/angular Jacobian blocks; `minv_*` are `M⁻¹ Jᵀ` for the same body.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianRow {
    pub slot_a: Option<usize>,
    pub slot_b: Option<usize>,
    pub j_a: [f64; 6],
    pub j_b: [f64; 6],
    pub minv_a: [f64; 6],
    pub minv_b: [f64; 6],
}

impl JacobianRow {
    fn dot6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// `J_i M⁻¹ J_iᵀ`.
    pub fn effective_inverse_mass(&self) -> f64 {
        let mut d = 0.0;
        if self.slot_a.is_some() {
            d += Self::dot6(&self.j_a, &self.minv_a);
        }
        if self.slot_b.is_some() {
            d += Self::dot6(&self.j_b, &self.minv_b);
        }
        d
    }

    /// `J_i · u` where `u` holds one 6-vector per body slot.
    pub fn apply(&self, u: &[[f64; 6]]) -> f64 {
        let mut s = 0.0;
        if let Some(a) = self.slot_a {
            s += Self::dot6(&self.j_a, &u[a]);
        }
        if let Some(b) = self.slot_b {
            s += Self::dot6(&self.j_b, &u[b]);
        }
        s
    }

    /// `u += M⁻¹ J_iᵀ · delta`.
    pub fn scatter(&self, u: &mut [[f64; 6]], delta: f64) {
        if let Some(a) = self.slot_a {
            for k in 0..6 {
                u[a][k] += self.minv_a[k] * delta;
            }
        }
        if let Some(b) = self.slot_b {
            for k in 0..6 {
                u[b][k] += self.minv_b[k] * delta;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemMatrix {
    Dense(DMatrix<f64>),
    Factored {
        rows: Vec<JacobianRow>,
        num_slots: usize,
        compliance: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlcpProblem {
    pub matrix: SystemMatrix,
    pub b: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub kinds: Vec<RowKind>,
    /// Starting iterate for the solver.
    pub initial: DVector<f64>,
}

impl MlcpProblem {
    pub fn empty() -> Self {
        Self::from_dense(DMatrix::zeros(0, 0), DVector::zeros(0), DVector::zeros(0), DVector::zeros(0))
    }

    /// A dense problem with plain box bounds on every row.
    pub fn from_dense(a: DMatrix<f64>, b: DVector<f64>, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        let m = b.len();
        assert_eq!(a.shape(), (m, m));
        assert_eq!(lo.len(), m);
        assert_eq!(hi.len(), m);
        let kinds = (0..m)
            .map(|i| {
                if lo[i] == f64::NEG_INFINITY && hi[i] == f64::INFINITY {
                    RowKind::Bilateral
                } else {
                    RowKind::ContactNormal
                }
            })
            .collect();
        Self {
            matrix: SystemMatrix::Dense(a),
            b,
            lo,
            hi,
            kinds,
            initial: DVector::zeros(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        match &self.matrix {
            SystemMatrix::Dense(a) => a[(i, i)],
            SystemMatrix::Factored { rows, compliance, .. } => {
                rows[i].effective_inverse_mass() + compliance
            }
        }
    }

    /// Materializes `A` densely. Quadratic in the row count; for tests and diagnostics.
    pub fn dense_a(&self) -> DMatrix<f64> {
        match &self.matrix {
            SystemMatrix::Dense(a) => a.clone(),
            SystemMatrix::Factored { rows, num_slots, compliance } => {
                let m = rows.len();
                let mut a = DMatrix::zeros(m, m);
                let mut u = vec![[0.0; 6]; *num_slots];
                for j in 0..m {
                    rows[j].scatter(&mut u, 1.0);
                    for i in 0..m {
                        a[(i, j)] = rows[i].apply(&u);
                    }
                    u.iter_mut().for_each(|x| *x = [0.0; 6]);
                    a[(j, j)] += compliance;
                }
                a
            }
        }
    }

    /// Bounds of row `i` given the current iterate; friction rows follow their normal row.
    #[inline]
    pub fn bounds(&self, i: usize, lambda: &[f64]) -> (f64, f64) {
        match self.kinds[i] {
            RowKind::Friction { normal_row, mu } => {
                let limit = mu * lambda[normal_row].max(0.0);
                (-limit, limit)
            }
            _ => (self.lo[i], self.hi[i]),
        }
    }
}

/// Row bookkeeping for mapping impulses back to joints and contacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowSource {
    Joint { id: ConstraintId, axis: u8 },
    Contact { key: (BodyId, BodyId, u32), axis: u8 },
}

/// Previous-step impulses used to warm start the solver and seed friction bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImpulseCache {
    pub joints: BTreeMap<ConstraintId, [f64; 3]>,
    pub contacts: BTreeMap<(BodyId, BodyId, u32), [f64; 3]>,
}

/// A dynamic or static body as seen by assembly.
#[derive(Clone, Debug)]
pub struct BodySlotInput<'a> {
    pub body: &'a RigidBody,
    pub state: BodyState,
}

#[derive(Clone, Debug)]
pub struct Assembly {
    pub problem: MlcpProblem,
    pub sources: Vec<RowSource>,
    /// Velocity `v + h M⁻¹ f` per slot, linear then angular.
    pub free_velocity: Vec<[f64; 6]>,
    pub slot_of: BTreeMap<BodyId, usize>,
    pub dropped: Vec<RowSource>,
}

impl Assembly {
    /// `v⁺ = v + h M⁻¹ f + M⁻¹ Jᵀ λ`, one 6-vector per slot.
    pub fn velocities(&self, lambda: &[f64]) -> Vec<[f64; 6]> {
        let mut v = self.free_velocity.clone();
        if let SystemMatrix::Factored { rows, .. } = &self.problem.matrix {
            for (row, &l) in rows.iter().zip(lambda) {
                row.scatter(&mut v, l);
            }
        }
        v
    }

    /// Impulses keyed by their source, for warm starting the next step.
    pub fn cache(&self, lambda: &[f64]) -> ImpulseCache {
        let mut cache = ImpulseCache::default();
        for (src, &l) in self.sources.iter().zip(lambda) {
            match *src {
                RowSource::Joint { id, axis } => {
                    cache.joints.entry(id).or_insert([0.0; 3])[axis as usize] = l
                }
                RowSource::Contact { key, axis } => {
                    cache.contacts.entry(key).or_insert([0.0; 3])[axis as usize] = l
                }
            }
        }
        cache
    }
}

struct Slot {
    inv_mass: f64,
    inv_inertia: Matrix3<f64>,
}

/// Builds the Jacobian row for a direction `d` applied at offsets `ra`/`rb`.
fn make_row(
    slots: &[Slot],
    slot_a: Option<usize>,
    slot_b: Option<usize>,
    d: &Vector3<f64>,
    ra: &Vector3<f64>,
    rb: &Vector3<f64>,
) -> JacobianRow {
    let ang_a = ra.cross(d);
    let ang_b = -rb.cross(d);
    let j_a = [d.x, d.y, d.z, ang_a.x, ang_a.y, ang_a.z];
    let j_b = [-d.x, -d.y, -d.z, ang_b.x, ang_b.y, ang_b.z];
    let minv = |slot: Option<usize>, j: &[f64; 6]| -> [f64; 6] {
        match slot {
            None => [0.0; 6],
            Some(s) => {
                let sl = &slots[s];
                let w = sl.inv_inertia * Vector3::new(j[3], j[4], j[5]);
                [
                    sl.inv_mass * j[0],
                    sl.inv_mass * j[1],
                    sl.inv_mass * j[2],
                    w.x,
                    w.y,
                    w.z,
                ]
            }
        }
    };
    JacobianRow {
        slot_a,
        slot_b,
        minv_a: minv(slot_a, &j_a),
        minv_b: minv(slot_b, &j_b),
        j_a,
        j_b,
    }
}

#[derive(Default)]
struct RowBuilder {
    rows: Vec<JacobianRow>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    kinds: Vec<RowKind>,
    sources: Vec<RowSource>,
    initial: Vec<f64>,
}

impl RowBuilder {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        free_velocity: &[[f64; 6]],
        row: JacobianRow,
        rhs_bias: f64,
        bounds: (f64, f64),
        kind: RowKind,
        src: RowSource,
        start: f64,
    ) {
        let jv = row.apply(free_velocity);
        self.b.push(rhs_bias - jv);
        self.lo.push(bounds.0);
        self.hi.push(bounds.1);
        self.kinds.push(kind);
        self.sources.push(src);
        self.initial.push(start);
        self.rows.push(row);
    }
}

/// Two unit tangents orthogonal to `n`, chosen deterministically.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.57735 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Assembles the timestep MLCP.
///
/// `bodies` lists every body that may be referenced, static ones included. Rows are ordered
/// joints first (in the given order, three per joint), then each contact's normal row followed
/// by its two friction rows when the combined friction coefficient is positive. Constraints
/// whose bodies are all static are dropped with a warning.
pub fn assemble_mlcp(
    bodies: &[BodySlotInput<'_>],
    joints: &[&JointSpec],
    contacts: &[Contact],
    h: f64,
    gravity: Vector3<f64>,
    config: &SolverConfig,
    warm: Option<&ImpulseCache>,
) -> Assembly {
    assert!(h > 0.0, "timestep must be positive");
    let mut slot_of = BTreeMap::new();
    let mut slots = Vec::new();
    let mut free_velocity = Vec::new();
    let mut state_of = BTreeMap::new();
    for input in bodies {
        state_of.insert(input.body.id, (input.body, input.state));
        if input.body.is_static() {
            continue;
        }
        let rot = input.state.rotation().to_rotation_matrix();
        let inv_inertia = rot.matrix() * input.body.inv_inertia_body() * rot.matrix().transpose();
        slot_of.insert(input.body.id, slots.len());
        slots.push(Slot { inv_mass: input.body.inv_mass(), inv_inertia });
        let v = input.state.lin_vel + gravity * h;
        let w = input.state.ang_vel;
        free_velocity.push([v.x, v.y, v.z, w.x, w.y, w.z]);
    }

    let mut out = RowBuilder::default();
    let mut dropped = Vec::new();

    for joint in joints {
        let (Some(&(body_a, sa)), Some(&(body_b, sb))) =
            (state_of.get(&joint.body_a), state_of.get(&joint.body_b))
        else {
            panic!("joint {} references a body not supplied to assembly", joint.id);
        };
        let slot_a = slot_of.get(&body_a.id).copied();
        let slot_b = slot_of.get(&body_b.id).copied();
        if slot_a.is_none() && slot_b.is_none() {
            warn!("dropping joint {} between static bodies", joint.id);
            for axis in 0..3 {
                dropped.push(RowSource::Joint { id: joint.id, axis });
            }
            continue;
        }
        let ra = sa.rotation() * joint.anchor_a();
        let rb = sb.rotation() * joint.anchor_b();
        let phi = (sa.position + ra) - (sb.position + rb);
        let cached = warm.and_then(|c| c.joints.get(&joint.id)).copied();
        for axis in 0..3u8 {
            let mut d = Vector3::zeros();
            d[axis as usize] = 1.0;
            let row = make_row(&slots, slot_a, slot_b, &d, &ra, &rb);
            out.push(
                &free_velocity,
                row,
                -config.joint_erp / h * phi[axis as usize],
                (f64::NEG_INFINITY, f64::INFINITY),
                RowKind::Bilateral,
                RowSource::Joint { id: joint.id, axis },
                cached.map_or(0.0, |c| c[axis as usize]),
            );
        }
    }

    for c in contacts {
        let (Some(&(body_a, sa)), Some(&(body_b, sb))) =
            (state_of.get(&c.body_a), state_of.get(&c.body_b))
        else {
            panic!("contact ({}, {}) references a body not supplied to assembly", c.body_a, c.body_b);
        };
        let slot_a = slot_of.get(&body_a.id).copied();
        let slot_b = slot_of.get(&body_b.id).copied();
        let key = c.key();
        if slot_a.is_none() && slot_b.is_none() {
            warn!("dropping contact between static bodies {} and {}", c.body_a, c.body_b);
            dropped.push(RowSource::Contact { key, axis: 0 });
            continue;
        }
        let ra = c.point - sa.position;
        let rb = c.point - sb.position;
        let cached = warm.and_then(|w| w.contacts.get(&key)).copied();
        let normal_row = out.rows.len();
        let penetration = (c.depth - config.slop).max(0.0);
        out.push(
            &free_velocity,
            make_row(&slots, slot_a, slot_b, &c.normal, &ra, &rb),
            config.contact_erp / h * penetration,
            (0.0, f64::INFINITY),
            RowKind::ContactNormal,
            RowSource::Contact { key, axis: 0 },
            cached.map_or(0.0, |x| x[0].max(0.0)),
        );
        let mu = (body_a.friction * body_b.friction).sqrt();
        if mu > 0.0 {
            let limit = mu * cached.map_or(0.0, |x| x[0].max(0.0));
            let (t1, t2) = tangent_basis(&c.normal);
            for (axis, t) in [(1u8, t1), (2u8, t2)] {
                out.push(
                &free_velocity,
                    make_row(&slots, slot_a, slot_b, &t, &ra, &rb),
                    0.0,
                    (-limit, limit),
                    RowKind::Friction { normal_row, mu },
                    RowSource::Contact { key, axis },
                    cached.map_or(0.0, |x| x[axis as usize].clamp(-limit, limit)),
                );
            }
        }
    }

    let RowBuilder { rows, b, lo, hi, kinds, sources, initial } = out;
    let m = rows.len();
    let warm_start = config.warm_start;
    let problem = MlcpProblem {
        matrix: SystemMatrix::Factored {
            rows,
            num_slots: slots.len(),
            compliance: config.compliance,
        },
        b: DVector::from_vec(b),
        lo: DVector::from_vec(lo),
        hi: DVector::from_vec(hi),
        kinds,
        initial: if warm_start {
            DVector::from_vec(initial)
        } else {
            DVector::zeros(m)
        },
    };
    Assembly {
        problem,
        sources,
        free_velocity,
        slot_of,
        dropped,
    }
}
