use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::agent::SacConfig;
use crate::barrier::{CalibrationMode, DEFAULT_ETA};
use crate::envs::{Env, ENV_NAMES};
use crate::safety_filter::DEFAULT_SLACK_WEIGHT;

/// How each environment constraint is turned into a lifted barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    /// `h` is the raw coordinate bound.
    Bound,
    /// Position bound blended with its rate; needs a constraint with a rate index.
    Composite,
}

/// Source of the proposal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalKind {
    /// Discrete LQR about the upright equilibrium (CartPole).
    Lqr,
    /// Cascaded PD (quadrotor) or proportional speed seeking (contact plant).
    Pd,
    /// The learned actor, trained during the run.
    Agent,
}

impl std::str::FromStr for NominalKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lqr" => Ok(Self::Lqr),
            "pd" => Ok(Self::Pd),
            "agent" => Ok(Self::Agent),
            other => Err(ExperimentError::InvalidConfig(format!("unknown nominal controller {other:?}"))),
        }
    }
}

/// Behaviour policy for the model-fitting data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectPolicy {
    /// Uniform samples from the action box.
    Random,
    /// The environment's model-based controller plus uniform noise of
    /// `collect_noise` half-ranges, whatever the run's nominal.
    NominalNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Number of RBF features in the dictionary.
    pub num_rbf: usize,
    pub ridge_lambda: f64,
    pub quantile_level: f64,
    pub calibration_mode: CalibrationMode,
    pub barrier: BarrierKind,
    pub composite_alpha: f64,
    pub composite_beta: f64,
    /// Decay per barrier; a single entry applies to all of them.
    pub eta: Vec<f64>,
    pub slack_weight: f64,
    pub nominal: NominalKind,
    pub filter: bool,
    pub seeds: Vec<u64>,
    /// Environment steps of agent training.
    pub budget: usize,
    /// Steps of uniform random exploration before the actor is queried.
    pub warmup_steps: usize,
    /// Gradient updates are made every this many environment steps.
    pub update_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    /// Transitions gathered for fitting and calibration together.
    pub collect_steps: usize,
    pub collect_policy: CollectPolicy,
    pub collect_noise: f64,
    /// Held-out calibration transitions; used when the data allows it.
    pub calibration_size: usize,
    /// Write the per-step filter trace of the first final-evaluation episode.
    pub trace: bool,
    pub agent: SacConfig,
}

impl RunConfig {
    /// Defaults for a named environment.
    pub fn for_env(env: &str) -> Result<Self, ExperimentError> {
        if !ENV_NAMES.contains(&env) {
            return Err(ExperimentError::InvalidConfig(format!("unknown environment {env:?}")));
        }
        let quad = env.starts_with("quadrotor");
        let contact = env == "synthetic_contact";
        // position bounds on the mechanical plants have relative degree two
        let mechanical = !contact;
        Ok(Self {
            env: env.to_string(),
            num_rbf: 32,
            ridge_lambda: 1e-6,
            quantile_level: 0.95,
            calibration_mode: CalibrationMode::Empirical,
            barrier: if mechanical { BarrierKind::Composite } else { BarrierKind::Bound },
            composite_alpha: 1.0,
            composite_beta: 0.5,
            eta: vec![DEFAULT_ETA],
            slack_weight: DEFAULT_SLACK_WEIGHT,
            nominal: if quad || contact { NominalKind::Pd } else { NominalKind::Lqr },
            filter: true,
            seeds: vec![0, 1, 2],
            budget: if quad { 60_000 } else { 30_000 },
            warmup_steps: 2_000,
            update_every: 1,
            eval_every: 5_000,
            eval_episodes: 10,
            final_eval_episodes: 100,
            collect_steps: 10_000,
            collect_policy: if quad { CollectPolicy::NominalNoise } else { CollectPolicy::Random },
            collect_noise: 0.5,
            calibration_size: 2_000,
            trace: true,
            agent: SacConfig::default(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Directory name for this configuration's artifacts.
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.env, &self.hash()[..12])
    }

    /// Decay for barrier `j`.
    pub fn eta_for(&self, j: usize) -> f64 {
        if self.eta.len() == 1 {
            self.eta[0]
        } else {
            self.eta[j]
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidConfig(msg));
        let env = Env::make(&self.env).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        let spec = env.spec();
        if self.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        if self.eta.is_empty() || (self.eta.len() != 1 && self.eta.len() != spec.constraints.len()) {
            return bad(format!("eta needs 1 or {} entries, got {}", spec.constraints.len(), self.eta.len()));
        }
        if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return bad(format!("eta {e} outside (0, 1]"));
        }
        if !(self.quantile_level > 0.0 && self.quantile_level < 1.0) {
            return bad(format!("quantile level {} outside (0, 1)", self.quantile_level));
        }
        if !(self.ridge_lambda >= 0.0) || !(self.slack_weight > 0.0) {
            return bad("ridge lambda must be nonnegative and slack weight positive".into());
        }
        if self.collect_steps < 10 {
            return bad(format!("collect_steps {} too small to split", self.collect_steps));
        }
        if self.update_every == 0 || self.eval_every == 0 {
            return bad("update_every and eval_every must be positive".into());
        }
        if self.barrier == BarrierKind::Composite {
            if !(self.composite_alpha > 0.0) || !(self.composite_beta >= 0.0) {
                return bad("composite weights need alpha > 0 and beta >= 0".into());
            }
            if spec.constraints.iter().any(|c| c.rate_index.is_none()) {
                return bad(format!("{} has a constraint without a rate coordinate", self.env));
            }
        }
        let supported = match self.nominal {
            NominalKind::Lqr => env.cartpole_params().is_some(),
            NominalKind::Pd => env.cartpole_params().is_none(),
            NominalKind::Agent => true,
        };
        if !supported {
            return bad(format!("nominal {:?} is not available for {}", self.nominal, self.env));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for env in ENV_NAMES {
            let cfg = RunConfig::for_env(env).unwrap();
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = RunConfig::for_env("cartpole").unwrap();
        let mut b = a.clone();
        b.agent.tau = 0.01;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert!(a.run_id().starts_with("cartpole-"));
    }

    #[test]
    fn rejects_invalid_settings() {
        let mut c = RunConfig::for_env("cartpole").unwrap();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_env("cartpole").unwrap();
        c.eta = vec![0.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_env("synthetic_contact").unwrap();
        c.barrier = BarrierKind::Composite;
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_env("quadrotor").unwrap();
        c.nominal = NominalKind::Lqr;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml("env = \"cartpole\"").is_err());
        assert!(RunConfig::for_env("walker").is_err());
    }
}
