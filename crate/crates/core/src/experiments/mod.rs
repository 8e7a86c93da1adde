//! End-to-end runs: data collection, model fitting, margin calibration,
//! filtered training and evaluation, plus the decay ablation and the
//! margin-versus-violation report.

mod analysis;
pub mod artifacts;
mod config;
mod data;
mod diagnostics;
mod pipeline;

pub use analysis::{
    ablation_eta, rank_test, rho_effect_report, tighter_eta_raises_slack_or_intervention, AblationRow, RankTest, RhoReport,
    RhoRow,
};
pub use artifacts::{EvalSummary, MeanStd, RunSummary, SeedSummary};
pub use config::{BarrierKind, CollectPolicy, NominalKind, RunConfig};
pub use data::{
    assert_disjoint, collect_transitions, random_action, split_calibration, Controller, Split, TransitionSet,
    TRANSITIONS_FORMAT_VERSION,
};
pub use diagnostics::{compute_diagnostics, EpisodeDiagnostics, RegimeHistogram, StepCounts, StepLog};
pub use pipeline::{
    build_barriers, calibrate_from, collect, evaluate, evaluate_saved, fit_from, load_prepared, prepare, prepare_from, rollout_columns, run_episode, run_pipeline,
    run_seed, seed_dir, seeded_stream, EvalEpisode, Executed, Policy, Prepared, SeedRun, Stepper,
};

use thiserror::Error;

use crate::agent::AgentError;
use crate::barrier::BarrierError;
use crate::envs::EnvError;
use crate::koopman::KoopmanError;
use crate::numerics::NumericsError;
use crate::safety_filter::FilterError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rollout log is empty")]
    EmptyLog,
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("model: {0}")]
    Koopman(#[from] KoopmanError),
    #[error("barrier: {0}")]
    Barrier(#[from] BarrierError),
    #[error("filter: {0}")]
    Filter(#[from] FilterError),
    #[error("agent: {0}")]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
