use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::{CollectPolicy, NominalKind, RunConfig};
use super::ExperimentError;
use crate::agent::{LqrController, QuadrotorPd};
use crate::envs::Env;
use crate::koopman::Transition;

/// Model-based proposal controllers.
#[derive(Debug, Clone)]
pub enum Controller {
    Lqr(LqrController),
    QuadrotorPd(QuadrotorPd),
    /// `u = clamp(gain (target − v))` with a target above the speed limit.
    SpeedSeek { gain: f64, target: f64 },
}

impl Controller {
    /// The controller selected by `kind`, or `None` for the learned agent.
    pub fn for_env(env: &Env, kind: NominalKind) -> Result<Option<Self>, ExperimentError> {
        let unavailable = || ExperimentError::InvalidConfig(format!("nominal {kind:?} is not available for {}", env.spec().name));
        Ok(match kind {
            NominalKind::Agent => None,
            NominalKind::Lqr => {
                let p = env.cartpole_params().ok_or_else(unavailable)?;
                Some(Self::Lqr(LqrController::cartpole_default(p)?))
            }
            NominalKind::Pd => {
                if let Some(p) = env.quadrotor_params() {
                    Some(Self::QuadrotorPd(QuadrotorPd::new(p.clone())))
                } else if let Some(p) = env.contact_params() {
                    Some(Self::SpeedSeek { gain: 2.0, target: 1.5 * p.v_max })
                } else {
                    return Err(unavailable());
                }
            }
        })
    }

    /// The model-based controller family available for `env`.
    pub fn model_based_kind(env: &Env) -> NominalKind {
        if env.cartpole_params().is_some() {
            NominalKind::Lqr
        } else {
            NominalKind::Pd
        }
    }

    /// Proposal for the environment's current state and reference.
    pub fn act(&self, env: &Env) -> Vec<f64> {
        let s = env.state();
        let box_ = &env.spec().action_box;
        match self {
            Self::Lqr(c) => {
                let target = match env.reference() {
                    Some(r) => vec![r[0], 0.0, r[1], 0.0],
                    None => vec![0.0; 4],
                };
                c.act(s, &target)
            }
            Self::QuadrotorPd(c) => {
                let target = env.reference().unwrap_or_else(|| vec![0.0, 1.0, 0.0, 0.0]);
                box_.clamp(&c.act(s, &target))
            }
            Self::SpeedSeek { gain, target } => box_.clamp(&[gain * (target - s[0])]),
        }
    }
}

/// Uniform sample from the action box.
pub fn random_action<R: Rng + ?Sized>(env: &Env, rng: &mut R) -> Vec<f64> {
    let b = &env.spec().action_box;
    b.lower.iter().zip(&b.upper).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
}

/// Transitions with the hash of the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

pub const TRANSITIONS_FORMAT_VERSION: u32 = 1;

impl TransitionSet {
    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let set: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if set.format_version != TRANSITIONS_FORMAT_VERSION {
            return Err(ExperimentError::Schema(format!(
                "transitions format version {} (expected {TRANSITIONS_FORMAT_VERSION})",
                set.format_version
            )));
        }
        Ok(set)
    }
}

/// Runs the behaviour policy for `config.collect_steps` steps, resetting on
/// episode end, and records modeling-state transitions in time order.
pub fn collect_transitions<R: Rng + ?Sized>(
    config: &RunConfig,
    rng: &mut R,
) -> Result<Vec<Transition>, ExperimentError> {
    let mut env = Env::make(&config.env)?;
    let nominal = match config.collect_policy {
        CollectPolicy::Random => None,
        CollectPolicy::NominalNoise => Controller::for_env(&env, Controller::model_based_kind(&env))?,
    };
    let b = env.spec().action_box.clone();
    let mut out = Vec::with_capacity(config.collect_steps);
    env.reset(rng);
    while out.len() < config.collect_steps {
        let u = match &nominal {
            None => random_action(&env, rng),
            Some(c) => {
                let base = c.act(&env);
                let noisy: Vec<f64> = base
                    .iter()
                    .zip(b.lower.iter().zip(&b.upper))
                    .map(|(u, (lo, hi))| u + config.collect_noise * 0.5 * (hi - lo) * rng.random_range(-1.0..=1.0))
                    .collect();
                b.clamp(&noisy)
            }
        };
        let y = env.modeling_state();
        let outcome = env.step(&u)?;
        out.push(Transition::new(y, u, outcome.modeling_state.clone()));
        if outcome.done() {
            env.reset(rng);
        }
    }
    Ok(out)
}

/// Disjoint index sets for fitting and calibration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub fit: Vec<usize>,
    pub calibration: Vec<usize>,
}

/// Holds out `calibration_size` transitions when at least five times that
/// many are available, otherwise 20%. Both index lists come back sorted so
/// the fit set keeps whatever contiguous runs survive the split.
pub fn split_calibration<R: Rng + ?Sized>(n: usize, calibration_size: usize, rng: &mut R) -> Split {
    let n_cal = if calibration_size > 0 && n >= 5 * calibration_size { calibration_size } else { n / 5 };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut calibration = idx[..n_cal].to_vec();
    let mut fit = idx[n_cal..].to_vec();
    calibration.sort_unstable();
    fit.sort_unstable();
    let split = Split { fit, calibration };
    assert_disjoint(&split, n);
    split
}

/// Panics when an index appears in both sets or any index is missing.
pub fn assert_disjoint(split: &Split, n: usize) {
    let mut seen = vec![0u8; n];
    for &i in split.fit.iter().chain(&split.calibration) {
        seen[i] += 1;
    }
    assert!(seen.iter().all(|c| *c == 1), "fit and calibration sets overlap or miss transitions");
}
