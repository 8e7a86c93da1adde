//! Affine lifted barriers `h_K(z) = cᵀz + d` and residual-margin calibration.

mod calibration;
mod union_bound;

pub use calibration::{
    calibrate_rho, calibrate_samples, conformal_rank, empirical_quantile, required_rank, BarrierCalibration, CalibrationMode, CalibrationReport,
    CoverageCounter, OrderIndex, CALIBRATION_FORMAT_VERSION,
};
pub use union_bound::{plan_union_bound, UnionBoundPlan};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::koopman::{Dictionary, KoopmanModel};

/// Barriers whose control authority `‖Bᵀc‖` falls below this are degenerate.
pub const DEGENERATE_AUTHORITY: f64 = 1e-6;
pub const DEFAULT_ETA: f64 = 0.9;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("coordinate {index} is outside the raw state block (state dimension {state_dim})")]
    IndexOutOfStateBlock { index: usize, state_dim: usize },
    #[error("composite barrier weights must be positive (alpha {alpha}, beta {beta})")]
    NonpositiveWeights { alpha: f64, beta: f64 },
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("calibration file: {0}")]
    Format(String),
    #[error("calibration json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Robust margin `ρ`; `Infinite` arises when the conformal rank exceeds the
/// calibration set size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Margin {
    Finite(f64),
    Infinite(InfiniteTag),
}

/// Serialized form of an infinite margin: the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfiniteTag {
    #[serde(rename = "inf")]
    Inf,
}

impl Margin {
    pub const INFINITE: Margin = Margin::Infinite(InfiniteTag::Inf);
    pub const ZERO: Margin = Margin::Finite(0.0);

    pub fn value(self) -> f64 {
        match self {
            Margin::Finite(v) => v,
            Margin::Infinite(_) => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Margin::Infinite(_))
    }
}

impl fmt::Display for Margin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Margin::Finite(v) => write!(f, "{v}"),
            Margin::Infinite(_) => write!(f, "inf"),
        }
    }
}

/// Raw-state and lifted dimensions a barrier is built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftedSpace {
    pub state_dim: usize,
    pub lifted_dim: usize,
}

impl From<&Dictionary> for LiftedSpace {
    fn from(d: &Dictionary) -> Self {
        Self { state_dim: d.state_dim(), lifted_dim: d.lifted_dim() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundDirection {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedBarrier {
    pub c: Vec<f64>,
    pub d: f64,
    pub eta: f64,
    pub rho: Margin,
    pub label: String,
}

impl LiftedBarrier {
    pub fn new(c: Vec<f64>, d: f64, label: impl Into<String>) -> Result<Self, BarrierError> {
        if c.iter().all(|v| *v == 0.0) {
            return Err(BarrierError::InvalidArgument("barrier normal c is zero".into()));
        }
        Ok(Self { c, d, eta: DEFAULT_ETA, rho: Margin::ZERO, label: label.into() })
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self, BarrierError> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(BarrierError::InvalidArgument(format!("eta must lie in (0, 1], got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn with_rho(mut self, rho: Margin) -> Result<Self, BarrierError> {
        if let Margin::Finite(v) = rho {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(BarrierError::InvalidArgument(format!("rho must be finite and >= 0, got {v}")));
            }
        }
        self.rho = rho;
        Ok(self)
    }

    /// `h_K(z) = cᵀz + d`.
    pub fn value(&self, z: &[f64]) -> f64 {
        self.project(z) + self.d
    }

    /// `cᵀv`.
    pub fn project(&self, v: &[f64]) -> f64 {
        self.c.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `a = Bᵀc`.
    pub fn input_gain(&self, model: &KoopmanModel) -> Vec<f64> {
        (0..model.action_dim())
            .map(|k| (0..model.lifted_dim()).map(|i| model.b[(i, k)] * self.c[i]).sum())
            .collect()
    }

    /// Control authority `‖Bᵀc‖₂`.
    pub fn authority(&self, model: &KoopmanModel) -> f64 {
        self.input_gain(model).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn unit(index: usize, lifted_dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; lifted_dim];
    c[index] = 1.0;
    c
}

fn check_index(space: LiftedSpace, index: usize) -> Result<(), BarrierError> {
    if index >= space.state_dim || space.state_dim > space.lifted_dim {
        return Err(BarrierError::IndexOutOfStateBlock { index, state_dim: space.state_dim });
    }
    Ok(())
}

/// Coordinate bound on a raw-state entry: `upper` gives `h = bound − y_i`,
/// `lower` gives `h = y_i − bound`.
pub fn bound_barrier(
    space: LiftedSpace,
    coordinate_index: usize,
    bound_value: f64,
    direction: BoundDirection,
) -> Result<LiftedBarrier, BarrierError> {
    check_index(space, coordinate_index)?;
    let e = unit(coordinate_index, space.lifted_dim);
    match direction {
        BoundDirection::Upper => LiftedBarrier::new(e.iter().map(|v| -v).collect(), bound_value, format!("x{coordinate_index}<={bound_value}")),
        BoundDirection::Lower => LiftedBarrier::new(e, -bound_value, format!("x{coordinate_index}>={bound_value}")),
    }
}

/// `h = v_max − v` on a raw velocity coordinate.
pub fn velocity_barrier(space: LiftedSpace, vel_index: usize, v_max: f64) -> Result<LiftedBarrier, BarrierError> {
    let mut b = bound_barrier(space, vel_index, v_max, BoundDirection::Upper)?;
    b.label = format!("v{vel_index}<={v_max}");
    Ok(b)
}

/// `h = α (y − y_min) + β ẏ`, which gives a position bound of relative
/// degree two a direct dependence on the input.
pub fn composite_barrier(
    space: LiftedSpace,
    pos_index: usize,
    vel_index: usize,
    pos_min: f64,
    alpha: f64,
    beta: f64,
) -> Result<LiftedBarrier, BarrierError> {
    if !(alpha > 0.0) || beta < 0.0 || beta.is_nan() {
        return Err(BarrierError::NonpositiveWeights { alpha, beta });
    }
    check_index(space, pos_index)?;
    check_index(space, vel_index)?;
    let mut c = vec![0.0; space.lifted_dim];
    c[pos_index] += alpha;
    c[vel_index] += beta;
    LiftedBarrier::new(c, -alpha * pos_min, format!("{alpha}*(x{pos_index}-{pos_min})+{beta}*x{vel_index}"))
}

/// Logs and reports whether a barrier has usable control authority under
/// `model`.
pub fn check_authority(barrier: &LiftedBarrier, model: &KoopmanModel) -> (f64, bool) {
    let norm = barrier.authority(model);
    let degenerate = norm < DEGENERATE_AUTHORITY;
    if degenerate {
        log::warn!(
            "barrier {} has control authority {norm:e} below {DEGENERATE_AUTHORITY:e}; its filter row is degenerate",
            barrier.label
        );
    }
    (norm, degenerate)
}
