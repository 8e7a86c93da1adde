//! Observable dictionary and controlled EDMD fitting.

mod dictionary;
mod model;

pub use dictionary::{fit_centers, within_cluster_ss, Dictionary};
pub use model::{
    fit_model, fit_model_with_horizon, multi_step_mse, one_step_mse, KoopmanModel, Transition, DEFAULT_MSE_HORIZON,
    MODEL_FORMAT_VERSION,
};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all data points coincide; cannot place more than one center")]
    DegenerateData,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model file: {0}")]
    Format(String),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
