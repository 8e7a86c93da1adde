use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BarrierError, LiftedBarrier, Margin};
use crate::koopman::{KoopmanModel, Transition};

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Empirical,
    Conformal,
}

/// 1-based order-statistic index, or `Infinite` when it exceeds the sample
/// count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderIndex {
    Index(usize),
    Infinite,
}

/// `⌈(N+1)(1−α)⌉`, at least 1. Exceeds `n_cal` when the level is finer
/// than the calibration set can resolve.
pub fn required_rank(n_cal: usize, alpha: f64) -> usize {
    let n1 = (n_cal + 1) as f64;
    // ⌈n1 − n1·α⌉ = n1 − ⌊n1·α⌋, with slack for products that land a few
    // ulps under an integer
    let k = n1 - (n1 * alpha + 1e-9).floor();
    k.max(1.0) as usize
}

/// Split-conformal rank `k = ⌈(N+1)(1−α)⌉`.
pub fn conformal_rank(n_cal: usize, alpha: f64) -> OrderIndex {
    let k = required_rank(n_cal, alpha);
    if k > n_cal {
        OrderIndex::Infinite
    } else {
        OrderIndex::Index(k)
    }
}

/// Sample quantile with the "higher" rule: the sorted entry at index
/// `⌈q(N−1)⌉` (0-based). Returns the 1-based rank alongside the value.
pub fn empirical_quantile(samples: &[f64], q: f64) -> Option<(usize, f64)> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let idx = ((pos - 1e-9).ceil().max(0.0) as usize).min(sorted.len() - 1);
    Some((idx + 1, sorted[idx]))
}

/// Running count of deployment residuals exceeding a barrier's margin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageCounter {
    pub exceedances: u64,
    pub observations: u64,
}

impl CoverageCounter {
    pub fn exceedance_rate(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            self.exceedances as f64 / self.observations as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCalibration {
    pub label: String,
    /// `δ_i = |cᵀ r_i|` in calibration-set order.
    pub samples: Vec<f64>,
    pub rho: Margin,
    pub order_index: OrderIndex,
    pub coverage: CoverageCounter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub format_version: u32,
    pub mode: CalibrationMode,
    /// Quantile level; `1 − α` in conformal mode.
    pub quantile_level: f64,
    pub n_cal: usize,
    /// Conformal rank shared by every barrier (conformal mode only).
    pub conformal_k: Option<OrderIndex>,
    pub barriers: Vec<BarrierCalibration>,
}

/// Projects every calibration residual onto each barrier normal and sets the
/// margin to the requested order statistic of `|cᵀr|`.
pub fn calibrate_rho(
    model: &KoopmanModel,
    barriers: &[LiftedBarrier],
    calibration: &[Transition],
    quantile_level: f64,
    mode: CalibrationMode,
) -> Result<CalibrationReport, BarrierError> {
    if calibration.is_empty() {
        return Err(BarrierError::EmptyCalibrationSet);
    }
    if !(0.0..=1.0).contains(&quantile_level) {
        return Err(BarrierError::InvalidArgument(format!("quantile level {quantile_level} outside [0, 1]")));
    }
    if let Some(b) = barriers.iter().find(|b| b.c.len() != model.lifted_dim()) {
        return Err(BarrierError::InvalidArgument(format!(
            "barrier {} has {} coefficients, model lifts to {}",
            b.label,
            b.c.len(),
            model.lifted_dim()
        )));
    }
    let residuals: Vec<Vec<f64>> = calibration.iter().map(|t| model.residual(t)).collect();
    let samples: Vec<Vec<f64>> =
        barriers.iter().map(|b| residuals.iter().map(|r| b.project(r).abs()).collect()).collect();
    calibrate_samples(barriers.iter().map(|b| b.label.clone()).collect(), samples, quantile_level, mode)
}

/// Calibration from precomputed projected residuals, one sample vector per
/// barrier.
pub fn calibrate_samples(
    labels: Vec<String>,
    samples: Vec<Vec<f64>>,
    quantile_level: f64,
    mode: CalibrationMode,
) -> Result<CalibrationReport, BarrierError> {
    let n_cal = samples.first().map_or(0, Vec::len);
    if n_cal == 0 {
        return Err(BarrierError::EmptyCalibrationSet);
    }
    if samples.iter().any(|s| s.len() != n_cal) || labels.len() != samples.len() {
        return Err(BarrierError::InvalidArgument("per-barrier sample counts differ".into()));
    }
    let conformal_k = match mode {
        CalibrationMode::Conformal => Some(conformal_rank(n_cal, 1.0 - quantile_level)),
        CalibrationMode::Empirical => None,
    };
    let barriers = labels
        .into_iter()
        .zip(samples)
        .map(|(label, samples)| {
            let (rho, order_index) = match conformal_k {
                Some(OrderIndex::Index(k)) => {
                    let mut sorted = samples.clone();
                    sorted.sort_by(f64::total_cmp);
                    (Margin::Finite(sorted[k - 1]), OrderIndex::Index(k))
                }
                Some(OrderIndex::Infinite) => {
                    log::warn!("barrier {label}: conformal rank exceeds {n_cal} samples, margin is infinite");
                    (Margin::INFINITE, OrderIndex::Infinite)
                }
                None => {
                    let (k, v) = empirical_quantile(&samples, quantile_level).expect("nonempty");
                    (Margin::Finite(v), OrderIndex::Index(k))
                }
            };
            BarrierCalibration { label, samples, rho, order_index, coverage: CoverageCounter::default() }
        })
        .collect();
    Ok(CalibrationReport { format_version: CALIBRATION_FORMAT_VERSION, mode, quantile_level, n_cal, conformal_k, barriers })
}

impl CalibrationReport {
    pub fn rhos(&self) -> Vec<Margin> {
        self.barriers.iter().map(|b| b.rho).collect()
    }

    /// Copies the calibrated margins onto `barriers` (matched by position).
    pub fn apply(&self, barriers: &mut [LiftedBarrier]) -> Result<(), BarrierError> {
        if barriers.len() != self.barriers.len() {
            return Err(BarrierError::InvalidArgument(format!(
                "report has {} barriers, got {}",
                self.barriers.len(),
                barriers.len()
            )));
        }
        for (b, cal) in barriers.iter_mut().zip(&self.barriers) {
            b.rho = cal.rho;
        }
        Ok(())
    }

    /// Records one deployment transition against barrier `index` and returns
    /// the running exceedance rate.
    pub fn monitor_coverage(
        &mut self,
        model: &KoopmanModel,
        index: usize,
        barrier: &LiftedBarrier,
        transition: &Transition,
    ) -> f64 {
        let delta = barrier.project(&model.residual(transition)).abs();
        self.record_projected(index, delta)
    }

    /// As [`Self::monitor_coverage`] with a precomputed `|cᵀr|`.
    pub fn record_projected(&mut self, index: usize, delta: f64) -> f64 {
        let cal = &mut self.barriers[index];
        cal.coverage.observations += 1;
        if delta > cal.rho.value() {
            cal.coverage.exceedances += 1;
        }
        cal.coverage.exceedance_rate()
    }

    pub fn to_json(&self) -> Result<String, BarrierError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, BarrierError> {
        let report: Self = serde_json::from_str(text)?;
        if report.format_version != CALIBRATION_FORMAT_VERSION {
            return Err(BarrierError::Format(format!(
                "calibration format version {} (expected {CALIBRATION_FORMAT_VERSION})",
                report.format_version
            )));
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<(), BarrierError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BarrierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
