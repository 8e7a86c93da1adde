use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{rk4, EnvSpec, ReferenceKind, StateConstraint};
use crate::barrier::BoundDirection;
use crate::safety_filter::ActionBox;

/// Planar quadrotor with two rotors at distance `arm` from the center. The
/// moment of inertia treats the frame as a slender rod of length `2·arm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub arm: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub dt: f64,
    pub min_altitude: f64,
    pub tilt_limit: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        let mass = 0.027;
        let arm = 0.0397;
        Self {
            mass,
            arm,
            inertia: mass * (2.0 * arm) * (2.0 * arm) / 12.0,
            gravity: 9.8,
            dt: 0.02,
            min_altitude: 0.1,
            tilt_limit: 1.0,
        }
    }
}

impl QuadrotorParams {
    pub fn max_thrust(&self) -> f64 {
        2.0 * self.mass * self.gravity
    }

    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.mass * self.gravity
    }
}

/// Time derivative of `(x, y, φ, ẋ, ẏ, φ̇)` under rotor thrusts `(T₁, T₂)`.
pub fn quadrotor_derivative(p: &QuadrotorParams, s: &[f64; 6], thrust: [f64; 2]) -> [f64; 6] {
    let total = thrust[0] + thrust[1];
    let (sin, cos) = s[2].sin_cos();
    [
        s[3],
        s[4],
        s[5],
        -total * sin / p.mass,
        total * cos / p.mass - p.gravity,
        p.arm * (thrust[1] - thrust[0]) / p.inertia,
    ]
}

pub fn quadrotor2d_step(p: &QuadrotorParams, s: &[f64; 6], thrust: [f64; 2]) -> [f64; 6] {
    rk4(|x| quadrotor_derivative(p, x, thrust), s, p.dt)
}

pub(super) fn spec(name: &str, p: &QuadrotorParams, tracking: bool) -> EnvSpec {
    let params = BTreeMap::from([
        ("mass".to_string(), p.mass),
        ("arm".to_string(), p.arm),
        ("inertia".to_string(), p.inertia),
        ("gravity".to_string(), p.gravity),
        ("tilt_limit".to_string(), p.tilt_limit),
    ]);
    EnvSpec {
        name: name.to_string(),
        state_dim: 6,
        modeling_dim: 6,
        observation_dim: if tracking { 10 } else { 6 },
        action_dim: 2,
        action_box: ActionBox { lower: vec![0.0; 2], upper: vec![p.max_thrust(); 2] },
        dt: p.dt,
        horizon: 500,
        constraints: vec![StateConstraint {
            coordinate: 1,
            bound: p.min_altitude,
            direction: BoundDirection::Lower,
            rate_index: Some(4),
        }],
        reward: "exp(-(|(x, y) - target|^2 + 0.1 phi^2))".into(),
        reference: tracking.then_some(ReferenceKind::Circle),
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_balances_gravity() {
        let p = QuadrotorParams::default();
        let h = p.hover_thrust();
        let d = quadrotor_derivative(&p, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], [h, h]);
        assert!(d.iter().all(|v| v.abs() < 1e-12), "{d:?}");
        let s = quadrotor2d_step(&p, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], [h, h]);
        assert!((s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thrust_difference_sets_roll_direction() {
        let p = QuadrotorParams::default();
        let d = quadrotor_derivative(&p, &[0.0; 6], [0.1, 0.2]);
        assert!(d[5] > 0.0);
    }

    #[test]
    fn free_fall() {
        let p = QuadrotorParams::default();
        let mut s = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..5 {
            s = quadrotor2d_step(&p, &s, [0.0, 0.0]);
        }
        assert!((s[1] - 0.951).abs() < 1e-4, "{}", s[1]);
    }

    #[test]
    fn inertia_from_slender_rod() {
        let p = QuadrotorParams::default();
        assert!((p.inertia - 1.4185e-5).abs() < 1e-8);
    }
}
