use serde::{Deserialize, Serialize};

use super::{ActionBox, ConstraintRow};

/// How a single constraint row relates to the actuator box at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Some admissible actions satisfy the row and some do not.
    FilterActive,
    /// No admissible action satisfies the row: `b > max aᵀu`.
    InfeasibleProneness,
    /// Every admissible action satisfies the row: `b ≤ min aᵀu`.
    TriviallySatisfied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// Set on trivially satisfied rows whose barrier is already negative.
    pub unsafe_state: bool,
}

pub fn classify_regime(rows: &[ConstraintRow], action_box: &ActionBox) -> Vec<RegimeReport> {
    rows.iter()
        .map(|row| {
            if row.inactive_by_infinity() {
                return RegimeReport { regime: Regime::InfeasibleProneness, unsafe_state: false };
            }
            let (lo, hi) = action_box.range_of(&row.a);
            let regime = if row.b <= lo {
                Regime::TriviallySatisfied
            } else if row.b > hi {
                Regime::InfeasibleProneness
            } else {
                Regime::FilterActive
            };
            RegimeReport { regime, unsafe_state: regime == Regime::TriviallySatisfied && row.h < 0.0 }
        })
        .collect()
}

fn violation(row: &ConstraintRow, u: &[f64]) -> f64 {
    let lhs: f64 = row.a.iter().zip(u).map(|(a, v)| a * v).sum();
    (row.b - lhs).max(0.0)
}

/// `Σ_j max(0, b_j − a_jᵀu)²` over rows with a finite offset.
pub fn cbf_penalty(rows: &[ConstraintRow], u: &[f64]) -> f64 {
    rows.iter().filter(|r| !r.inactive_by_infinity()).map(|r| violation(r, u).powi(2)).sum()
}

/// Gradient of [`cbf_penalty`] with respect to `u`.
pub fn cbf_penalty_grad(rows: &[ConstraintRow], u: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    for row in rows.iter().filter(|r| !r.inactive_by_infinity()) {
        let v = violation(row, u);
        if v > 0.0 {
            for (gi, ai) in g.iter_mut().zip(&row.a) {
                *gi -= 2.0 * v * ai;
            }
        }
    }
    g
}
