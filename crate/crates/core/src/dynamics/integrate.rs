//! Semi-implicit Euler position update.

use nalgebra::{Quaternion, Vector3};

use crate::types::BodyState;

/// Adopts `v_plus` (linear, angular) as the new velocity and advances position and orientation
/// by `h`. The orientation takes the first-order step `q += (h/2) ω q` and is renormalized.
pub fn integrate_body(state: &mut BodyState, v_plus: &[f64; 6], h: f64) {
    state.lin_vel = Vector3::new(v_plus[0], v_plus[1], v_plus[2]);
    state.ang_vel = Vector3::new(v_plus[3], v_plus[4], v_plus[5]);
    state.position += state.lin_vel * h;
    let w = state.ang_vel;
    let spin = Quaternion::new(0.0, w.x, w.y, w.z) * state.orientation;
    let q = state.orientation + spin * (0.5 * h);
    state.orientation = q / q.norm();
}

/// Integrates every state with its matching velocity.
pub fn integrate(states: &mut [BodyState], v_plus: &[[f64; 6]], h: f64) {
    assert_eq!(states.len(), v_plus.len());
    for (s, v) in states.iter_mut().zip(v_plus) {
        integrate_body(s, v, h);
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use nalgebra::UnitQuaternion;

    use super::*;

    #[test]
    fn zero_velocity_keeps_pose() {
        let mut s = BodyState::at_rest(Vector3::new(1.0, 2.0, 3.0));
        let before = s;
        integrate_body(&mut s, &[0.0; 6], 0.01);
        assert_eq!(s, before);
    }

    #[test]
    fn half_turn_about_z() {
        let mut s = BodyState::default();
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, PI];
        for _ in 0..1000 {
            integrate_body(&mut s, &v, 1e-3);
        }
        let got = UnitQuaternion::new_normalize(s.orientation);
        let want = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        assert!(got.angle_to(&want) < 1e-3, "angle error {}", got.angle_to(&want));
        assert!((s.orientation.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_fall_one_second() {
        let g = -9.81;
        let h = 0.002;
        let mut s = BodyState::default();
        for _ in 0..500 {
            let v = [0.0, s.lin_vel.y + g * h, 0.0, 0.0, 0.0, 0.0];
            integrate_body(&mut s, &v, h);
        }
        let analytic = 0.5 * 9.81;
        assert!(((-s.position.y) - analytic).abs() / analytic < 0.01);
    }
}
