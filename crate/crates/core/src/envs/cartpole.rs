use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{rk4, EnvSpec, ReferenceKind, StateConstraint};
use crate::barrier::BoundDirection;
use crate::safety_filter::ActionBox;

/// Frictionless cart-pole; `half_length` is the distance from the pivot to
/// the pole's center of mass, `θ = 0` is upright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub force_limit: f64,
    pub position_limit: f64,
    pub theta_limit: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            force_limit: 10.0,
            position_limit: 0.2,
            theta_limit: 0.4,
        }
    }
}

/// Time derivative of `(p, θ, ṗ, θ̇)` under force `f`.
pub fn cartpole_derivative(p: &CartPoleParams, s: &[f64; 4], force: f64) -> [f64; 4] {
    let [_, theta, p_dot, theta_dot] = *s;
    let total = p.cart_mass + p.pole_mass;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + p.pole_mass * p.half_length * theta_dot * theta_dot * sin) / total;
    let theta_acc =
        (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
    let p_acc = temp - p.pole_mass * p.half_length * theta_acc * cos / total;
    [p_dot, theta_dot, p_acc, theta_acc]
}

pub fn cartpole_step(p: &CartPoleParams, s: &[f64; 4], force: f64) -> [f64; 4] {
    rk4(|x| cartpole_derivative(p, x, force), s, p.dt)
}

/// Total mechanical energy, with the pole a uniform rod about its center.
pub fn cartpole_energy(p: &CartPoleParams, s: &[f64; 4]) -> f64 {
    let [_, theta, p_dot, theta_dot] = *s;
    let l = p.half_length;
    let (sin, cos) = theta.sin_cos();
    let vx = p_dot + l * cos * theta_dot;
    let vy = -l * sin * theta_dot;
    let inertia = p.pole_mass * l * l / 3.0;
    0.5 * p.cart_mass * p_dot * p_dot
        + 0.5 * p.pole_mass * (vx * vx + vy * vy)
        + 0.5 * inertia * theta_dot * theta_dot
        + p.pole_mass * p.gravity * l * cos
}

pub(super) fn spec(name: &str, p: &CartPoleParams, tracking: bool) -> EnvSpec {
    let params = BTreeMap::from([
        ("cart_mass".to_string(), p.cart_mass),
        ("pole_mass".to_string(), p.pole_mass),
        ("half_length".to_string(), p.half_length),
        ("gravity".to_string(), p.gravity),
        ("force_limit".to_string(), p.force_limit),
        ("theta_limit".to_string(), p.theta_limit),
    ]);
    EnvSpec {
        name: name.to_string(),
        state_dim: 4,
        modeling_dim: 4,
        observation_dim: if tracking { 6 } else { 4 },
        action_dim: 1,
        action_box: ActionBox::symmetric(p.force_limit, 1),
        dt: p.dt,
        horizon: 250,
        constraints: vec![
            StateConstraint {
                coordinate: 0,
                bound: p.position_limit,
                direction: BoundDirection::Upper,
                rate_index: Some(2),
            },
            StateConstraint {
                coordinate: 0,
                bound: -p.position_limit,
                direction: BoundDirection::Lower,
                rate_index: Some(2),
            },
        ],
        reward: if tracking {
            "exp(-((p - p_ref)^2 + theta^2))".into()
        } else {
            "exp(-(theta^2 + 0.1 p^2))".into()
        },
        reference: tracking.then_some(ReferenceKind::Sinusoid),
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let p = CartPoleParams::default();
        assert_eq!(cartpole_step(&p, &[0.0; 4], 0.0), [0.0; 4]);
    }

    /// `exp(M)` by scaling and squaring of a truncated Taylor series.
    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let norm = m.abs().row_sum().max();
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let scaled = m / 2f64.powi(squarings);
        let mut result = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            result += &term;
        }
        for _ in 0..squarings {
            result = &result * &result;
        }
        result
    }

    #[test]
    fn small_angle_motion_matches_linearization() {
        let p = CartPoleParams::default();
        // linearization of the equations about upright rest, unforced
        let total = p.cart_mass + p.pole_mass;
        let denom = p.half_length * (4.0 / 3.0 - p.pole_mass / total);
        let a_theta = p.gravity / denom;
        let a_p = -p.pole_mass * p.half_length * a_theta / total;
        let ac = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, a_p, 0.0, 0.0, 0.0, a_theta, 0.0, 0.0],
        );
        let phi = expm(&(ac * p.dt));
        let x0 = [1e-3, 1e-4, -2e-4, 3e-4];
        let mut lin = DVector::from_column_slice(&x0);
        let mut s = x0;
        for _ in 0..50 {
            s = cartpole_step(&p, &s, 0.0);
            lin = &phi * lin;
            for i in 0..4 {
                assert!((s[i] - lin[i]).abs() < 1e-4, "coordinate {i}: {} vs {}", s[i], lin[i]);
            }
        }
    }

    #[test]
    fn energy_is_conserved_without_force() {
        let p = CartPoleParams::default();
        let mut s = [0.0, std::f64::consts::PI - 0.5, 0.1, 0.0];
        let e0 = cartpole_energy(&p, &s);
        for _ in 0..500 {
            s = cartpole_step(&p, &s, 0.0);
            let drift = (cartpole_energy(&p, &s) - e0).abs() / e0.abs();
            assert!(drift <= 1e-5, "relative drift {drift}");
        }
    }

    #[test]
    fn push_accelerates_cart_and_tips_pole_back() {
        let p = CartPoleParams::default();
        let d = cartpole_derivative(&p, &[0.0; 4], 1.0);
        assert!(d[2] > 0.0);
        assert!(d[3] < 0.0);
    }
}
