//! Deterministic simulated plants with explicit state constraints.
//!
//! | name                | state                   | action          | horizon |
//! |---------------------|-------------------------|-----------------|---------|
//! | `cartpole`          | `(p, θ, ṗ, θ̇)`          | force, ±10 N    | 250     |
//! | `cartpole_track`    | as above                | as above        | 250     |
//! | `quadrotor`         | `(x, y, φ, ẋ, ẏ, φ̇)`    | two thrusts     | 500     |
//! | `quadrotor_track`   | as above                | as above        | 500     |
//! | `synthetic_contact` | `(v, phase)`            | `a ∈ [−1, 1]`   | 300     |
//!
//! The modeling state (what the Koopman model lifts) is the physical state
//! for the mechanical plants and `[v]` alone for the contact plant, whose
//! impulse phase is deliberately hidden. Tracking tasks append the current
//! reference to the agent observation only.

mod cartpole;
mod contact;
mod quadrotor;
mod reference;

pub use cartpole::{cartpole_derivative, cartpole_energy, cartpole_step, CartPoleParams};
pub use contact::{synthetic_contact_step, ContactParams};
pub use quadrotor::{quadrotor2d_step, quadrotor_derivative, QuadrotorParams};
pub use reference::{make_reference, ReferenceKind};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::BoundDirection;
use crate::safety_filter::ActionBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("unknown reference kind {0:?}")]
    UnknownKind(String),
    #[error("state became non-finite at step {step}: {state:?}")]
    NonFiniteState { step: usize, state: Vec<f64> },
    #[error("action {action:?} outside the actuator box")]
    ActionOutOfBox { action: Vec<f64> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Coordinate bound on the modeling state. `rate_index` names the
/// coordinate holding its time derivative, used by composite barriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateConstraint {
    pub coordinate: usize,
    pub bound: f64,
    pub direction: BoundDirection,
    pub rate_index: Option<usize>,
}

impl StateConstraint {
    /// Barrier value on the true state: nonnegative inside the safe set.
    pub fn value(&self, y: &[f64]) -> f64 {
        match self.direction {
            BoundDirection::Upper => self.bound - y[self.coordinate],
            BoundDirection::Lower => y[self.coordinate] - self.bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub modeling_dim: usize,
    pub observation_dim: usize,
    pub action_dim: usize,
    pub action_box: ActionBox,
    pub dt: f64,
    pub horizon: usize,
    pub constraints: Vec<StateConstraint>,
    pub reward: String,
    pub reference: Option<ReferenceKind>,
    /// Physical constants, recorded so run artifacts are self-describing.
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Constraint values on the successor state.
    pub h: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub observation: Vec<f64>,
    pub modeling_state: Vec<f64>,
    pub reward: f64,
    /// 1 when any constraint is violated at the successor, else 0.
    pub cost: f64,
    /// The plant left its operating region; no bootstrapping past this.
    pub terminated: bool,
    /// The horizon was reached.
    pub truncated: bool,
    pub info: StepInfo,
    /// Exact copy of the action the plant integrated.
    pub applied_action: Vec<f64>,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Plant {
    CartPole(CartPoleParams),
    Quadrotor(QuadrotorParams),
    Contact(ContactParams),
}

/// A plant instance with its episode clock.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    plant: Plant,
    state: Vec<f64>,
    step: usize,
}

pub const ENV_NAMES: [&str; 5] = ["cartpole", "cartpole_track", "quadrotor", "quadrotor_track", "synthetic_contact"];

impl Env {
    pub fn make(name: &str) -> Result<Self, EnvError> {
        let (spec, plant) = match name {
            "cartpole" | "cartpole_track" => {
                let p = CartPoleParams::default();
                let tracking = name == "cartpole_track";
                (cartpole::spec(name, &p, tracking), Plant::CartPole(p))
            }
            "quadrotor" | "quadrotor_track" => {
                let p = QuadrotorParams::default();
                let tracking = name == "quadrotor_track";
                (quadrotor::spec(name, &p, tracking), Plant::Quadrotor(p))
            }
            "synthetic_contact" => {
                let p = ContactParams::default();
                (contact::spec(name, &p), Plant::Contact(p))
            }
            other => return Err(EnvError::UnknownEnv(other.to_string())),
        };
        let state = vec![0.0; spec.state_dim];
        Ok(Self { spec, plant, state, step: 0 })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn cartpole_params(&self) -> Option<&CartPoleParams> {
        match &self.plant {
            Plant::CartPole(p) => Some(p),
            _ => None,
        }
    }

    pub fn quadrotor_params(&self) -> Option<&QuadrotorParams> {
        match &self.plant {
            Plant::Quadrotor(p) => Some(p),
            _ => None,
        }
    }

    pub fn contact_params(&self) -> Option<&ContactParams> {
        match &self.plant {
            Plant::Contact(p) => Some(p),
            _ => None,
        }
    }

    /// Samples an initial state from the task's reset distribution.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let state = match &self.plant {
            Plant::CartPole(_) => (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect(),
            Plant::Quadrotor(_) => {
                let start = self.reference_at(0).map_or([0.0, 1.0], |r| [r[0], r[1]]);
                let mut s: Vec<f64> = (0..6).map(|_| rng.random_range(-0.05..=0.05)).collect();
                s[0] += start[0];
                s[1] += start[1];
                s
            }
            Plant::Contact(p) => {
                vec![rng.random_range(-0.5..=0.5), rng.random_range(0..p.period) as f64]
            }
        };
        self.reset_to(state)
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: Vec<f64>) -> Vec<f64> {
        assert_eq!(state.len(), self.spec.state_dim, "state has wrong dimension");
        self.state = state;
        self.step = 0;
        self.observation()
    }

    /// Reference at an episode step, for tracking tasks.
    pub fn reference_at(&self, step: usize) -> Option<Vec<f64>> {
        self.spec.reference.map(|k| k.evaluate(step))
    }

    pub fn reference(&self) -> Option<Vec<f64>> {
        self.reference_at(self.step)
    }

    pub fn modeling_state(&self) -> Vec<f64> {
        self.state[..self.spec.modeling_dim].to_vec()
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = self.modeling_state();
        if let Some(r) = self.reference() {
            obs.extend(r);
        }
        obs
    }

    pub fn constraint_values(&self, state: &[f64]) -> Vec<f64> {
        self.spec.constraints.iter().map(|c| c.value(state)).collect()
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if action.len() != self.spec.action_dim {
            return Err(EnvError::Dimension(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.spec.action_dim
            )));
        }
        if !self.spec.action_box.contains(action) {
            return Err(EnvError::ActionOutOfBox { action: action.to_vec() });
        }
        let next: Vec<f64> = match &self.plant {
            Plant::CartPole(p) => {
                let s: [f64; 4] = self.state.as_slice().try_into().expect("cartpole state");
                cartpole_step(p, &s, action[0]).to_vec()
            }
            Plant::Quadrotor(p) => {
                let s: [f64; 6] = self.state.as_slice().try_into().expect("quadrotor state");
                quadrotor2d_step(p, &s, [action[0], action[1]]).to_vec()
            }
            Plant::Contact(p) => {
                let (v, phase) = synthetic_contact_step(p, self.state[0], self.state[1] as u32, action[0]);
                vec![v, phase as f64]
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteState { step: self.step, state: next });
        }
        self.state = next;
        self.step += 1;

        let reference = self.reference();
        let h = self.constraint_values(&self.state);
        let cost = if h.iter().any(|v| *v < 0.0) { 1.0 } else { 0.0 };
        let s = &self.state;
        let (reward, terminated) = match &self.plant {
            Plant::CartPole(p) => {
                let reward = match &reference {
                    Some(r) => (-((s[0] - r[0]).powi(2) + s[1] * s[1])).exp(),
                    None => (-(s[1] * s[1] + 0.1 * s[0] * s[0])).exp(),
                };
                (reward, s[1].abs() > p.theta_limit)
            }
            Plant::Quadrotor(p) => {
                let target = reference.as_ref().map_or([0.0, 1.0], |r| [r[0], r[1]]);
                let d2 = (s[0] - target[0]).powi(2) + (s[1] - target[1]).powi(2);
                ((-(d2 + 0.1 * s[2] * s[2])).exp(), s[2].abs() > p.tilt_limit)
            }
            Plant::Contact(_) => (s[0], false),
        };
        Ok(StepOutcome {
            next_state: self.state.clone(),
            observation: self.observation(),
            modeling_state: self.modeling_state(),
            reward,
            cost,
            terminated,
            truncated: self.step >= self.spec.horizon,
            info: StepInfo { h, reference },
            applied_action: action.to_vec(),
        })
    }
}

/// Classic fourth-order Runge–Kutta step.
pub(crate) fn rk4<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], x: &[f64; N], dt: f64) -> [f64; N] {
    let add = |a: &[f64; N], k: &[f64; N], s: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + s * k[i]) };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * dt));
    let k3 = f(&add(x, &k2, 0.5 * dt));
    let k4 = f(&add(x, &k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}
