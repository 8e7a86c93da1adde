use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvSpec, StateConstraint};
use crate::barrier::BoundDirection;
use crate::safety_filter::ActionBox;

/// Scalar velocity plant with a periodic impulse the model cannot see:
/// `v⁺ = v + gain·a + J`, where `J = impulse` on the step the phase counter
/// wraps around and zero otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub gain: f64,
    pub impulse: f64,
    pub period: u32,
    pub v_max: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { gain: 0.1, impulse: 0.5, period: 10, v_max: 1.0 }
    }
}

/// Returns `(v⁺, phase⁺)`.
pub fn synthetic_contact_step(p: &ContactParams, v: f64, phase: u32, action: f64) -> (f64, u32) {
    let next_phase = (phase + 1) % p.period;
    let jump = if next_phase == 0 { p.impulse } else { 0.0 };
    (v + p.gain * action + jump, next_phase)
}

pub(super) fn spec(name: &str, p: &ContactParams) -> EnvSpec {
    let params = BTreeMap::from([
        ("gain".to_string(), p.gain),
        ("impulse".to_string(), p.impulse),
        ("period".to_string(), p.period as f64),
        ("v_max".to_string(), p.v_max),
    ]);
    EnvSpec {
        name: name.to_string(),
        state_dim: 2,
        modeling_dim: 1,
        observation_dim: 1,
        action_dim: 1,
        action_box: ActionBox::symmetric(1.0, 1),
        dt: 1.0,
        horizon: 300,
        constraints: vec![StateConstraint {
            coordinate: 0,
            bound: p.v_max,
            direction: BoundDirection::Upper,
            rate_index: None,
        }],
        reward: "v".into(),
        reference: None,
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quiet_phase_with_zero_action_holds_velocity() {
        let p = ContactParams::default();
        assert_eq!(synthetic_contact_step(&p, 0.3, 2, 0.0), (0.3, 3));
    }

    #[test]
    fn impulse_ignores_the_action() {
        let p = ContactParams::default();
        for a in [-1.0, 0.0, 1.0] {
            let (v, phase) = synthetic_contact_step(&p, 0.0, 9, a);
            assert_eq!(phase, 0);
            assert!((v - (0.5 + 0.1 * a)).abs() < 1e-15);
        }
    }

    #[test]
    fn one_impulse_per_period() {
        let p = ContactParams::default();
        let (mut v, mut phase) = (0.0, 4);
        let mut jumps = 0;
        for _ in 0..100 {
            let (nv, np) = synthetic_contact_step(&p, v, phase, 0.0);
            if nv > v {
                jumps += 1;
            }
            (v, phase) = (nv, np);
        }
        assert_eq!(jumps, 10);
        assert!((v - 5.0).abs() < 1e-12);
    }
}
