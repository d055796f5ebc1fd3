//! Narrowphase for the supported primitive pairs plus a sort-and-sweep broadphase.

use nalgebra::Vector3;

use crate::types::{BodyState, Contact, PairKey, RigidBody, Shape};

/// Returns all contacts among `bodies`, ordered by `(body_a, body_b, feature)`.
///
/// Pairs of static bodies never collide. Pairs for which `skip` returns true are ignored.
pub fn detect_collisions_filtered(
    bodies: &[(&RigidBody, &BodyState)],
    mut skip: impl FnMut(PairKey) -> bool,
) -> Vec<Contact> {
    let mut planes = Vec::new();
    let mut finite = Vec::new();
    for (k, (body, state)) in bodies.iter().enumerate() {
        match body.shape {
            Shape::Plane { .. } => planes.push(k),
            ref s => {
                let r = s.bounding_radius();
                finite.push((state.position.x - r, state.position.x + r, k));
            }
        }
    }
    finite.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let mut out = Vec::new();
    let mut test = |i: usize, j: usize, out: &mut Vec<Contact>| {
        let (bi, si) = bodies[i];
        let (bj, sj) = bodies[j];
        if bi.is_static() && bj.is_static() {
            return;
        }
        if skip(PairKey::new(bi.id, bj.id)) {
            return;
        }
        collide_pair(bi, si, bj, sj, out);
    };

    for (n, &(_, hi, i)) in finite.iter().enumerate() {
        for &(lo_j, _, j) in &finite[n + 1..] {
            if lo_j > hi {
                break;
            }
            test(i, j, &mut out);
        }
    }
    for &p in &planes {
        for &(_, _, k) in &finite {
            test(p, k, &mut out);
        }
    }
    out.sort_by_key(Contact::key);
    out
}

/// Contacts among all pairs of `bodies`.
pub fn detect_collisions(bodies: &[(&RigidBody, &BodyState)]) -> Vec<Contact> {
    detect_collisions_filtered(bodies, |_| false)
}

/// Appends the contacts between two bodies, if any, oriented so `body_a < body_b`.
pub fn collide_pair(
    a: &RigidBody,
    sa: &BodyState,
    b: &RigidBody,
    sb: &BodyState,
    out: &mut Vec<Contact>,
) {
    if a.id > b.id {
        return collide_pair(b, sb, a, sa, out);
    }
    // `raw` holds contacts with the normal pointing from `b` to `a`, or from `a` to `b` when
    // `flip` is set.
    let mut raw = Vec::new();
    let flip = match (&a.shape, &b.shape) {
        (Shape::Sphere { radius: ra }, Shape::Sphere { radius: rb }) => {
            sphere_sphere(sa.position, *ra, sb.position, *rb, &mut raw);
            false
        }
        (Shape::Sphere { radius }, Shape::Plane { normal, offset }) => {
            sphere_plane(sa.position, *radius, normal, *offset, &mut raw);
            false
        }
        (Shape::Plane { normal, offset }, Shape::Sphere { radius }) => {
            sphere_plane(sb.position, *radius, normal, *offset, &mut raw);
            true
        }
        (Shape::Box { half_extents }, Shape::Plane { normal, offset }) => {
            box_plane(sa, half_extents, normal, *offset, &mut raw);
            false
        }
        (Shape::Plane { normal, offset }, Shape::Box { half_extents }) => {
            box_plane(sb, half_extents, normal, *offset, &mut raw);
            true
        }
        (Shape::Sphere { radius }, Shape::Box { half_extents }) => {
            sphere_box(sa.position, *radius, sb, half_extents, &mut raw);
            false
        }
        (Shape::Box { half_extents }, Shape::Sphere { radius }) => {
            sphere_box(sb.position, *radius, sa, half_extents, &mut raw);
            true
        }
        // box-box and plane-plane are not supported
        _ => return,
    };
    for (feature, point, normal, depth) in raw {
        out.push(Contact {
            body_a: a.id,
            body_b: b.id,
            feature,
            point,
            normal: if flip { -normal } else { normal },
            depth,
        });
    }
}

type RawContact = (u32, Vector3<f64>, Vector3<f64>, f64);

/// Normal points from sphere B to sphere A.
fn sphere_sphere(
    ca: Vector3<f64>,
    ra: f64,
    cb: Vector3<f64>,
    rb: f64,
    out: &mut Vec<RawContact>,
) {
    let delta = ca - cb;
    let dist = delta.norm();
    let depth = ra + rb - dist;
    if depth < 0.0 {
        return;
    }
    let normal = if dist > 1e-12 {
        delta / dist
    } else {
        Vector3::y()
    };
    let point = cb + normal * (rb - 0.5 * depth);
    out.push((0, point, normal, depth));
}

/// Normal points from the plane to the sphere.
fn sphere_plane(
    c: Vector3<f64>,
    r: f64,
    normal: &[f64; 3],
    offset: f64,
    out: &mut Vec<RawContact>,
) {
    let n = Vector3::from(*normal);
    let s = n.dot(&c) - offset;
    if s > r {
        return;
    }
    out.push((0, c - n * r, n, r - s));
}

/// One contact per penetrating corner. Normal points from the plane to the box.
fn box_plane(
    state: &BodyState,
    half: &[f64; 3],
    normal: &[f64; 3],
    offset: f64,
    out: &mut Vec<RawContact>,
) {
    let n = Vector3::from(*normal);
    let rot = state.rotation();
    for corner in 0..8u32 {
        let local = Vector3::new(
            if corner & 1 == 0 { -half[0] } else { half[0] },
            if corner & 2 == 0 { -half[1] } else { half[1] },
            if corner & 4 == 0 { -half[2] } else { half[2] },
        );
        let p = state.position + rot * local;
        let s = n.dot(&p) - offset;
        if s <= 0.0 {
            out.push((corner, p, n, (-s).max(0.0)));
        }
    }
}

/// Normal points from the box to the sphere.
fn sphere_box(
    c: Vector3<f64>,
    r: f64,
    bstate: &BodyState,
    half: &[f64; 3],
    out: &mut Vec<RawContact>,
) {
    let rot = bstate.rotation();
    let local = rot.inverse() * (c - bstate.position);
    let h = Vector3::from(*half);
    let closest = local.sup(&-h).inf(&h);
    let diff = local - closest;
    let dist = diff.norm();
    let (n_local, surface, depth) = if dist > 1e-12 {
        (diff / dist, closest, r - dist)
    } else {
        // Center inside the box: push out through the nearest face.
        let mut axis = 0;
        let mut best = f64::INFINITY;
        for i in 0..3 {
            let gap = h[i] - local[i].abs();
            if gap < best {
                best = gap;
                axis = i;
            }
        }
        let mut n = Vector3::zeros();
        n[axis] = if local[axis] >= 0.0 { 1.0 } else { -1.0 };
        let mut surface = local;
        surface[axis] = n[axis] * h[axis];
        (n, surface, r + best)
    };
    if depth < 0.0 {
        return;
    }
    out.push((
        0,
        bstate.position + rot * surface,
        rot * n_local,
        depth,
    ));
}
