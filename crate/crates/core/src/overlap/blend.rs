use std::collections::BTreeMap;

use nalgebra::{Quaternion, Vector3};
use thiserror::Error;

use crate::types::{BodyState, WorkerId};

use super::BlendWeights;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlendError {
    #[error("weights and states disagree on the worker set")]
    KeyMismatch,
    #[error("blended orientation has zero norm")]
    DegenerateRotation,
}

/// Convex combination of per-worker states of one body.
///
/// Positions and velocities are averaged directly. Quaternions are accumulated component-wise,
/// flipping any that point away from the running sum, and the result is normalized.
pub fn blend(
    weights: &BlendWeights,
    states: &BTreeMap<WorkerId, BodyState>,
) -> Result<BodyState, BlendError> {
    if weights.len() != states.len() || weights.workers().any(|w| !states.contains_key(&w)) {
        return Err(BlendError::KeyMismatch);
    }
    if weights.len() == 1 {
        let (w, _) = weights.iter().next().expect("one weight");
        return Ok(states[&w]);
    }
    let mut position = Vector3::zeros();
    let mut lin_vel = Vector3::zeros();
    let mut ang_vel = Vector3::zeros();
    let mut q = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (w, weight) in weights.iter() {
        let s = &states[&w];
        position += s.position * weight;
        lin_vel += s.lin_vel * weight;
        ang_vel += s.ang_vel * weight;
        let qi = if s.orientation.coords.dot(&q.coords) < 0.0 {
            -s.orientation
        } else {
            s.orientation
        };
        q += qi * weight;
    }
    let norm = q.norm();
    if !(norm > 0.0) {
        return Err(BlendError::DegenerateRotation);
    }
    Ok(BodyState { position, orientation: q / norm, lin_vel, ang_vel })
}
