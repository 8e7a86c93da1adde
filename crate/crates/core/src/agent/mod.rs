//! Maximum-entropy actor-critic trained through the safety filter.
//!
//! The critics are trained on the executed (filtered) action, and their
//! bootstrap target filters the next sampled action with the same filter.
//! The actor minimizes `α log π(u|s) − min_i Q_i(s, u) + λ_h ℓ_cbf(z, u)` at
//! the unfiltered proposal `u`, where `ℓ_cbf` is the squared hinge on the
//! constraint rows at the stored lifted state.
//!
//! Actions are Gaussian samples squashed by `tanh` and rescaled to the
//! actuator box; `log π` is the density in actuator units. Critics see the
//! action rescaled back to `[−1, 1]`.

mod adam;
mod mlp;
pub mod nominal;
mod replay;

pub use adam::Adam;
pub use mlp::{Mlp, MlpCache};
pub use nominal::{linearize, lqr_nominal, LqrController, QuadrotorPd};
pub use replay::{ReplayBuffer, ReplayRecord};

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety_filter::{cbf_penalty, cbf_penalty_grad, ActionBox, ConstraintRow, FilterError, SafetyFilter};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("replay record's executed action {stored:?} differs from the applied action {applied:?}")]
    OffTransition { stored: Vec<f64>, applied: Vec<f64> },
    #[error("invalid replay record: {0}")]
    InvalidRecord(String),
    #[error("non-finite {which} loss ({value}); {dump}")]
    NonFiniteLoss { which: &'static str, value: f64, dump: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// First-moment decay of the optimizer; 0 disables momentum.
    pub adam_beta1: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub init_temperature: f64,
    pub lambda_h: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            lr: 3e-4,
            adam_beta1: 0.0,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 100_000,
            init_temperature: 0.1,
            lambda_h: 1.0,
        }
    }
}

/// Column-stacked minibatch. Actions are in actuator units.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: DMatrix<f64>,
    pub z: Vec<Vec<f64>>,
    pub u_nom: DMatrix<f64>,
    pub u_safe: DMatrix<f64>,
    pub reward: Vec<f64>,
    pub obs_next: DMatrix<f64>,
    pub z_next: Vec<Vec<f64>>,
    pub done: Vec<f64>,
}

impl Batch {
    pub fn from_records(records: &[&ReplayRecord]) -> Result<Self, AgentError> {
        let Some(first) = records.first() else { return Err(AgentError::EmptyBatch) };
        let n = records.len();
        let cols = |f: &dyn Fn(&ReplayRecord) -> &Vec<f64>, dim: usize| {
            DMatrix::from_fn(dim, n, |i, j| f(records[j])[i])
        };
        Ok(Self {
            obs: cols(&|r| &r.s, first.s.len()),
            z: records.iter().map(|r| r.z.clone()).collect(),
            u_nom: cols(&|r| &r.u_nom, first.u_nom.len()),
            u_safe: cols(&|r| &r.u_safe, first.u_safe.len()),
            reward: records.iter().map(|r| r.reward).collect(),
            obs_next: cols(&|r| &r.s_next, first.s_next.len()),
            z_next: records.iter().map(|r| r.z_next.clone()).collect(),
            done: records.iter().map(|r| if r.done { 1.0 } else { 0.0 }).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }
}

/// Squashed-Gaussian policy evaluated on a batch with fixed noise.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub mean: DMatrix<f64>,
    /// Clamped log standard deviation.
    pub log_std: DMatrix<f64>,
    /// Whether the raw log standard deviation lay inside the clamp range.
    pub log_std_free: DMatrix<bool>,
    pub noise: DMatrix<f64>,
    /// `tanh(mean + σ·noise)`, in `[−1, 1]`.
    pub squashed: DMatrix<f64>,
    /// Actions in actuator units.
    pub u: DMatrix<f64>,
    pub log_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub log_prob: Vec<f64>,
    pub mean_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic_loss: [f64; 2],
    pub actor_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub penalty: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh(x)²)` without cancellation for large `|x|`.
fn log_one_minus_tanh_sq(x: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    mid: Vec<f64>,
    half: Vec<f64>,
    pub actor_net: Mlp,
    pub critic_net: Mlp,
    pub actor: Vec<f64>,
    pub critics: [Vec<f64>; 2],
    pub targets: [Vec<f64>; 2],
    pub log_alpha: f64,
    /// Entropy target in actuator units: `−dim(u) + Σ log(half-width)`,
    /// i.e. `−dim(u)` for the normalized action.
    pub target_entropy: f64,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    alpha_opt: Adam,
    rng: ChaCha8Rng,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(obs_dim: usize, action_box: &ActionBox, config: SacConfig, seed: u64) -> Self {
        let act_dim = action_box.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor_net = Mlp::new(obs_dim, &config.hidden, 2 * act_dim);
        let critic_net = Mlp::new(obs_dim + act_dim, &config.hidden, 1);
        let actor = actor_net.init(&mut rng);
        let critics = [critic_net.init(&mut rng), critic_net.init(&mut rng)];
        let mid: Vec<f64> = action_box.lower.iter().zip(&action_box.upper).map(|(l, h)| 0.5 * (l + h)).collect();
        let half: Vec<f64> = action_box.lower.iter().zip(&action_box.upper).map(|(l, h)| 0.5 * (h - l)).collect();
        let target_entropy = -(act_dim as f64) + half.iter().map(|h| h.ln()).sum::<f64>();
        Self {
            obs_dim,
            act_dim,
            actor_opt: Adam::new(actor.len(), config.lr, config.adam_beta1),
            critic_opts: [
                Adam::new(critics[0].len(), config.lr, config.adam_beta1),
                Adam::new(critics[1].len(), config.lr, config.adam_beta1),
            ],
            alpha_opt: Adam::new(1, config.lr, config.adam_beta1),
            log_alpha: config.init_temperature.ln(),
            targets: critics.clone(),
            config,
            mid,
            half,
            actor_net,
            critic_net,
            actor,
            critics,
            target_entropy,
            rng,
            updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn normalize(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| (u[(i, j)] - self.mid[i]) / self.half[i])
    }

    pub fn standard_normal<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(self.act_dim, batch, |_, _| rng.sample(StandardNormal))
    }

    /// Evaluates the policy on `obs` with the given standard-normal noise.
    pub fn policy(&self, actor: &[f64], obs: &DMatrix<f64>, noise: &DMatrix<f64>) -> (MlpCache, PolicyOutput) {
        let cache = self.actor_net.forward(actor, obs);
        let out = cache.output();
        let (m, b) = (self.act_dim, obs.ncols());
        let mean = out.rows(0, m).into_owned();
        let raw = out.rows(m, m);
        let log_std = raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_free = raw.map(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let pre = DMatrix::from_fn(m, b, |i, j| mean[(i, j)] + log_std[(i, j)].exp() * noise[(i, j)]);
        let squashed = pre.map(f64::tanh);
        let u = DMatrix::from_fn(m, b, |i, j| self.mid[i] + self.half[i] * squashed[(i, j)]);
        let log_prob = (0..b)
            .map(|j| {
                (0..m)
                    .map(|i| {
                        let e = noise[(i, j)];
                        -0.5 * e * e - log_std[(i, j)] - HALF_LN_2PI - log_one_minus_tanh_sq(pre[(i, j)]) - self.half[i].ln()
                    })
                    .sum()
            })
            .collect();
        (cache, PolicyOutput { mean, log_std, log_std_free, noise: noise.clone(), squashed, u, log_prob })
    }

    /// Reparameterized sample `(u_nom, log π(u_nom|s))`.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let noise = self.standard_normal(1, rng);
        let (_, out) = self.policy(&self.actor, &DMatrix::from_column_slice(s.len(), 1, s), &noise);
        (out.u.column(0).iter().copied().collect(), out.log_prob[0])
    }

    /// Sample using the agent's own generator.
    pub fn act(&mut self, s: &[f64]) -> Vec<f64> {
        let mut rng = self.rng.clone();
        let (u, _) = self.sample_action(s, &mut rng);
        self.rng = rng;
        u
    }

    /// Squashed mean action, used for evaluation.
    pub fn deterministic_action(&self, s: &[f64]) -> Vec<f64> {
        let noise = DMatrix::zeros(self.act_dim, 1);
        let (_, out) = self.policy(&self.actor, &DMatrix::from_column_slice(s.len(), 1, s), &noise);
        out.u.column(0).iter().copied().collect()
    }

    fn critic_input(obs: &DMatrix<f64>, action: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (obs.nrows(), action.nrows());
        DMatrix::from_fn(n + m, obs.ncols(), |i, j| if i < n { obs[(i, j)] } else { action[(i - n, j)] })
    }

    /// Bootstrapped soft targets with the next action filtered:
    /// `r + γ(1 − d)[min_i Q̄_i(s', Π(u')) − α log π(u'|s')]`.
    pub fn critic_targets(
        &self,
        batch: &Batch,
        filter: Option<&SafetyFilter>,
        noise: &DMatrix<f64>,
    ) -> Result<Vec<f64>, AgentError> {
        let (_, next) = self.policy(&self.actor, &batch.obs_next, noise);
        let u_exec = match filter {
            Some(f) => {
                let mut u = next.u.clone();
                for j in 0..batch.len() {
                    let u_nom: Vec<f64> = next.u.column(j).iter().copied().collect();
                    let res = f.filter_rows(f.assemble(&batch.z_next[j]), &u_nom)?;
                    u.column_mut(j).copy_from_slice(&res.u_safe);
                }
                u
            }
            None => next.u.clone(),
        };
        let input = Self::critic_input(&batch.obs_next, &self.normalize(&u_exec));
        let q1 = self.critic_net.forward(&self.targets[0], &input);
        let q2 = self.critic_net.forward(&self.targets[1], &input);
        let alpha = self.alpha();
        Ok((0..batch.len())
            .map(|j| {
                let soft = q1.output()[(0, j)].min(q2.output()[(0, j)]) - alpha * next.log_prob[j];
                batch.reward[j] + self.config.gamma * (1.0 - batch.done[j]) * soft
            })
            .collect())
    }

    /// `½·mean (Q(s, u_safe) − y)²` and its parameter gradient.
    pub fn critic_loss(&self, params: &[f64], batch: &Batch, targets: &[f64]) -> (f64, Vec<f64>) {
        let input = Self::critic_input(&batch.obs, &self.normalize(&batch.u_safe));
        let cache = self.critic_net.forward(params, &input);
        let b = batch.len() as f64;
        let err = DMatrix::from_fn(1, batch.len(), |_, j| cache.output()[(0, j)] - targets[j]);
        let loss = 0.5 * err.iter().map(|e| e * e).sum::<f64>() / b;
        let (grad, _) = self.critic_net.backward(params, &cache, &(err / b));
        (loss, grad)
    }

    /// Actor objective `mean[α log π − min_i Q_i(s, u) + λ_h ℓ_cbf(rows, u)]`
    /// and its gradient. `rows` is empty or holds one row set per sample.
    pub fn actor_loss(
        &self,
        actor: &[f64],
        obs: &DMatrix<f64>,
        noise: &DMatrix<f64>,
        rows: &[Vec<ConstraintRow>],
        alpha: f64,
        lambda_h: f64,
    ) -> ActorLoss {
        let (m, b) = (self.act_dim, obs.ncols());
        let bf = b as f64;
        let (cache, pol) = self.policy(actor, obs, noise);
        let input = Self::critic_input(obs, &pol.squashed);
        let c1 = self.critic_net.forward(&self.critics[0], &input);
        let c2 = self.critic_net.forward(&self.critics[1], &input);
        let mut g1 = DMatrix::zeros(1, b);
        let mut g2 = DMatrix::zeros(1, b);
        let mut loss = 0.0;
        let mut penalty_sum = 0.0;
        for j in 0..b {
            let (q1, q2) = (c1.output()[(0, j)], c2.output()[(0, j)]);
            if q1 <= q2 {
                g1[(0, j)] = -1.0 / bf;
            } else {
                g2[(0, j)] = -1.0 / bf;
            }
            let penalty = rows.get(j).map_or(0.0, |r| {
                let u: Vec<f64> = pol.u.column(j).iter().copied().collect();
                cbf_penalty(r, &u)
            });
            penalty_sum += penalty;
            loss += alpha * pol.log_prob[j] - q1.min(q2) + lambda_h * penalty;
        }
        let (_, gx1) = self.critic_net.backward(&self.critics[0], &c1, &g1);
        let (_, gx2) = self.critic_net.backward(&self.critics[1], &c2, &g2);
        let n = self.obs_dim;
        let mut grad_out = DMatrix::zeros(2 * m, b);
        for j in 0..b {
            let pen_grad = rows.get(j).map(|r| {
                let u: Vec<f64> = pol.u.column(j).iter().copied().collect();
                cbf_penalty_grad(r, &u)
            });
            for i in 0..m {
                let a = pol.squashed[(i, j)];
                let mut d_a = gx1[(n + i, j)] + gx2[(n + i, j)];
                if let Some(g) = &pen_grad {
                    d_a += lambda_h / bf * self.half[i] * g[i];
                }
                let d_pre = alpha / bf * 2.0 * a + d_a * (1.0 - a * a);
                grad_out[(i, j)] = d_pre;
                grad_out[(m + i, j)] = if pol.log_std_free[(i, j)] {
                    -alpha / bf + d_pre * pol.log_std[(i, j)].exp() * pol.noise[(i, j)]
                } else {
                    0.0
                };
            }
        }
        let (grad, _) = self.actor_net.backward(actor, &cache, &grad_out);
        ActorLoss { loss: loss / bf, grad, mean_penalty: penalty_sum / bf, log_prob: pol.log_prob }
    }

    fn check(which: &'static str, value: f64, batch: &Batch) -> Result<(), AgentError> {
        if value.is_finite() {
            return Ok(());
        }
        let dump = format!(
            "batch of {} (reward range {:?}, first obs {:?})",
            batch.len(),
            batch.reward.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(*r), hi.max(*r))),
            batch.obs.column(0).iter().collect::<Vec<_>>()
        );
        Err(AgentError::NonFiniteLoss { which, value, dump })
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// followed by Polyak averaging of the target critics.
    pub fn update(&mut self, batch: &Batch, filter: Option<&SafetyFilter>) -> Result<LossReport, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let mut rng = self.rng.clone();
        let next_noise = self.standard_normal(batch.len(), &mut rng);
        let noise = self.standard_normal(batch.len(), &mut rng);
        self.rng = rng;

        let targets = self.critic_targets(batch, filter, &next_noise)?;
        let mut critic_loss = [0.0; 2];
        for i in 0..2 {
            let (loss, grad) = self.critic_loss(&self.critics[i], batch, &targets);
            Self::check("critic", loss, batch)?;
            self.critic_opts[i].step(&mut self.critics[i], &grad);
            critic_loss[i] = loss;
        }

        let rows: Vec<Vec<ConstraintRow>> = match filter {
            Some(f) => batch.z.iter().map(|z| f.assemble(z)).collect(),
            None => Vec::new(),
        };
        let alpha = self.alpha();
        let actor = self.actor_loss(&self.actor, &batch.obs, &noise, &rows, alpha, self.config.lambda_h);
        Self::check("actor", actor.loss, batch)?;
        self.actor_opt.step(&mut self.actor, &actor.grad);

        let mean_log_prob = actor.log_prob.iter().sum::<f64>() / batch.len() as f64;
        let alpha_grad = -(mean_log_prob + self.target_entropy);
        Self::check("temperature", alpha_grad, batch)?;
        let mut la = [self.log_alpha];
        self.alpha_opt.step(&mut la, &[alpha_grad]);
        self.log_alpha = la[0];

        let tau = self.config.tau;
        for i in 0..2 {
            for (t, p) in self.targets[i].iter_mut().zip(&self.critics[i]) {
                *t = (1.0 - tau) * *t + tau * p;
            }
        }
        self.updates += 1;
        Ok(LossReport { critic_loss, actor_loss: actor.loss, alpha: self.alpha(), entropy: -mean_log_prob, penalty: actor.mean_penalty })
    }

    pub fn save_checkpoint(&self, path: &Path, config_hash: &str) -> Result<(), AgentError> {
        let file = Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, config_hash: config_hash.to_string(), agent: self.clone() };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    /// Returns the agent and the config hash it was saved with.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, String), AgentError> {
        let file: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AgentError::Format(format!(
                "checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        Ok((file.agent, file.config_hash))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config_hash: String,
    agent: SacAgent,
}
