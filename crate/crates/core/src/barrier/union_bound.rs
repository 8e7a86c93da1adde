use serde::{Deserialize, Serialize};

use super::calibration::{conformal_rank, required_rank, OrderIndex};
use super::BarrierError;

/// Per-step level needed to make `J` barriers hold over `T` steps with total
/// failure probability `δ`, and whether `n_cal` samples can resolve it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnionBoundPlan {
    pub per_step_alpha: f64,
    pub n_cal: usize,
    pub conformal_k: OrderIndex,
    /// `⌈(N+1)(1−α')⌉` even when it exceeds `n_cal`.
    pub required_rank: usize,
    pub vacuous: bool,
    /// Smallest calibration set for which the conformal rank is finite.
    pub min_n_cal: u64,
}

pub fn plan_union_bound(horizon: u64, num_barriers: u64, target_delta: f64, n_cal: usize) -> Result<UnionBoundPlan, BarrierError> {
    if horizon == 0 || num_barriers == 0 {
        return Err(BarrierError::InvalidArgument("horizon and barrier count must be at least 1".into()));
    }
    if !(target_delta > 0.0 && target_delta < 1.0) {
        return Err(BarrierError::InvalidArgument(format!("delta must lie in (0, 1), got {target_delta}")));
    }
    let per_step_alpha = target_delta / (horizon as f64 * num_barriers as f64);
    let conformal_k = conformal_rank(n_cal, per_step_alpha);
    let min_n_cal = ((1.0 / per_step_alpha) * (1.0 - 1e-12)).ceil() as u64 - 1;
    Ok(UnionBoundPlan {
        per_step_alpha,
        n_cal,
        conformal_k,
        required_rank: required_rank(n_cal, per_step_alpha),
        vacuous: conformal_k == OrderIndex::Infinite,
        min_n_cal,
    })
}
