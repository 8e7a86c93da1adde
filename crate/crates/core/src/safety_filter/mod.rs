//! Robust affine CBF constraints in the lifted space and the slack-augmented
//! QP that projects a nominal action onto them.
//!
//! For a barrier `h(z) = cᵀz + d` and model `z⁺ ≈ Az + Bu` the one-step
//! condition `h(z⁺) ≥ (1−η)h(z) + ρ` becomes `aᵀu ≥ b(z)` with
//! `a = Bᵀc` and `b(z) = (1−η)(cᵀz + d) + ρ − cᵀAz − d`. The filter solves
//!
//! ```text
//!     minimize    ½ Σ_i w_i (u_i − u_nom,i)² + λ_ξ Σ_j ξ_j²
//!     subject to  a_jᵀu + ξ_j ≥ b_j,   u_min ≤ u ≤ u_max,   ξ ≥ 0
//! ```
//!
//! which is feasible for any data since the slacks are unbounded above. The
//! action weights `w` default to one; [`SafetyFilter::normalized`] sets them
//! to `1/half²` so the slack weight means the same thing whatever the
//! actuator units.

mod regime;
mod trace;

pub use regime::{cbf_penalty, cbf_penalty_grad, classify_regime, Regime, RegimeReport};
pub use trace::{FilterTrace, TraceRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{LiftedBarrier, DEGENERATE_AUTHORITY};
use crate::koopman::KoopmanModel;
use crate::numerics::{solve_qp, NumericsError, QpProblem, QpSolution, KKT_TOL};

/// `‖u_safe − u_nom‖₂` above this counts as an intervention.
pub const INTERVENTION_EPS: f64 = 1e-6;
/// Slack above this means the strict certificate was relaxed.
pub const SLACK_TOL: f64 = 1e-8;
pub const DEFAULT_SLACK_WEIGHT: f64 = 1e4;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("filter QP failed: {0}")]
    Solver(#[from] NumericsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned actuator limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, FilterError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(FilterError::Dimension(format!("box bounds of length {} and {}", lower.len(), upper.len())));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(FilterError::InvalidArgument("box bounds must be finite with lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(limit: f64, dim: usize) -> Self {
        Self { lower: vec![-limit; dim], upper: vec![limit; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    /// `(min, max)` of `aᵀu` over the box.
    pub fn range_of(&self, a: &[f64]) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (ai, (l, h)) in a.iter().zip(self.lower.iter().zip(&self.upper)) {
            let (p, q) = (ai * l, ai * h);
            lo += p.min(q);
            hi += p.max(q);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub a: Vec<f64>,
    /// Infinite when the barrier margin is infinite.
    pub b: f64,
    pub barrier_label: String,
    pub degenerate: bool,
    /// `h(z)` at the state the row was assembled for.
    pub h: f64,
    /// `b ≤ min over the box of aᵀu`.
    pub trivially_satisfied: bool,
}

impl ConstraintRow {
    pub fn inactive_by_infinity(&self) -> bool {
        self.b == f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Certificate {
    /// Every row holds with zero slack.
    Enforced,
    /// Some slack exceeded the tolerance; the strict condition was relaxed.
    SlackActive,
    /// Some row holds for every admissible action although the state is
    /// already outside the safe set, so the condition certifies nothing.
    TriviallySatisfied,
    /// Some row has (numerically) no control authority.
    DegenerateRow,
    /// Some row has an infinite margin and was dropped.
    InfiniteRho,
}

impl Certificate {
    pub fn as_str(self) -> &'static str {
        match self {
            Certificate::Enforced => "enforced",
            Certificate::SlackActive => "slack_active",
            Certificate::TriviallySatisfied => "trivially_satisfied",
            Certificate::DegenerateRow => "degenerate_row",
            Certificate::InfiniteRho => "infinite_rho",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u_safe: Vec<f64>,
    /// Slack per barrier: the QP value for rows in the QP, `max(0, b − aᵀu)`
    /// for degenerate rows and `∞` for rows with infinite margin.
    pub xi: Vec<f64>,
    pub intervened: bool,
    pub intervention_norm: f64,
    pub certificate: Certificate,
    pub rows: Vec<ConstraintRow>,
    pub qp: QpSolution,
}

impl FilterResult {
    pub fn max_slack(&self) -> f64 {
        self.xi.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max)
    }
}

/// Barrier rows with the state-independent parts `Bᵀc` and `Aᵀc`
/// precomputed.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    barriers: Vec<LiftedBarrier>,
    gains: Vec<Vec<f64>>,
    drift: Vec<Vec<f64>>,
    action_box: ActionBox,
    slack_weight: f64,
    action_weights: Vec<f64>,
}

impl SafetyFilter {
    pub fn new(
        model: &KoopmanModel,
        barriers: Vec<LiftedBarrier>,
        action_box: ActionBox,
        slack_weight: f64,
    ) -> Result<Self, FilterError> {
        let n = model.lifted_dim();
        let m = model.action_dim();
        if action_box.dim() != m {
            return Err(FilterError::Dimension(format!("box has {} entries, model has {m} inputs", action_box.dim())));
        }
        if !(slack_weight > 0.0) || !slack_weight.is_finite() {
            return Err(FilterError::InvalidArgument(format!("slack weight must be positive, got {slack_weight}")));
        }
        if let Some(b) = barriers.iter().find(|b| b.c.len() != n) {
            return Err(FilterError::Dimension(format!("barrier {} has {} coefficients, expected {n}", b.label, b.c.len())));
        }
        let gains = barriers.iter().map(|b| b.input_gain(model)).collect();
        let drift = barriers
            .iter()
            .map(|b| (0..n).map(|k| (0..n).map(|i| model.a[(i, k)] * b.c[i]).sum()).collect())
            .collect();
        let action_weights = vec![1.0; m];
        Ok(Self { barriers, gains, drift, action_box, slack_weight, action_weights })
    }

    pub fn barriers(&self) -> &[LiftedBarrier] {
        &self.barriers
    }

    pub fn action_box(&self) -> &ActionBox {
        &self.action_box
    }

    pub fn slack_weight(&self) -> f64 {
        self.slack_weight
    }

    /// Replaces the unit metric on the action with `Σ w_i (u_i − u_nom,i)²`.
    pub fn with_action_weights(mut self, weights: Vec<f64>) -> Result<Self, FilterError> {
        if weights.len() != self.action_box.dim() {
            return Err(FilterError::Dimension(format!("{} action weights for a {}-dimensional box", weights.len(), self.action_box.dim())));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(FilterError::InvalidArgument(format!("action weights must be positive, got {weights:?}")));
        }
        self.action_weights = weights;
        Ok(self)
    }

    /// Measures interventions in box-normalized units: weights `1/half²`,
    /// so every coordinate's full half-range costs the same.
    pub fn normalized(self) -> Result<Self, FilterError> {
        let w = self.action_box.lower.iter().zip(&self.action_box.upper).map(|(l, h)| 4.0 / ((h - l) * (h - l))).collect();
        self.with_action_weights(w)
    }

    pub fn action_weights(&self) -> &[f64] {
        &self.action_weights
    }

    pub fn assemble(&self, z: &[f64]) -> Vec<ConstraintRow> {
        self.barriers
            .iter()
            .zip(self.gains.iter().zip(&self.drift))
            .map(|(bar, (a, drift))| {
                assert_eq!(z.len(), bar.c.len(), "lifted state has wrong dimension");
                let h = bar.value(z);
                let predicted: f64 = drift.iter().zip(z).map(|(p, q)| p * q).sum::<f64>() + bar.d;
                let b = if bar.rho.is_infinite() {
                    f64::INFINITY
                } else {
                    (1.0 - bar.eta) * h + bar.rho.value() - predicted
                };
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (lo, _) = self.action_box.range_of(a);
                ConstraintRow {
                    a: a.clone(),
                    b,
                    barrier_label: bar.label.clone(),
                    degenerate: norm < DEGENERATE_AUTHORITY,
                    h,
                    trivially_satisfied: b <= lo,
                }
            })
            .collect()
    }

    pub fn filter(&self, z: &[f64], u_nom: &[f64]) -> Result<FilterResult, FilterError> {
        let rows = self.assemble(z);
        self.filter_rows(rows, u_nom)
    }

    /// Solves the filter QP for rows already assembled at the current state.
    pub fn filter_rows(&self, rows: Vec<ConstraintRow>, u_nom: &[f64]) -> Result<FilterResult, FilterError> {
        let m = self.action_box.dim();
        if u_nom.len() != m {
            return Err(FilterError::Dimension(format!("nominal action has {} entries, expected {m}", u_nom.len())));
        }
        if u_nom.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::InvalidArgument("nominal action is not finite".into()));
        }
        let u_nom = if self.action_box.contains(u_nom) {
            u_nom.to_vec()
        } else {
            log::warn!("nominal action {u_nom:?} outside the actuator box; clamping");
            self.action_box.clamp(u_nom)
        };

        let in_qp: Vec<usize> =
            (0..rows.len()).filter(|&j| !rows[j].degenerate && !rows[j].inactive_by_infinity()).collect();
        for row in rows.iter().filter(|r| r.inactive_by_infinity()) {
            log::warn!("barrier {} has infinite margin; its constraint is dropped", row.barrier_label);
        }
        let s = in_qp.len();
        let dim = m + s;
        let mut hessian_diag = self.action_weights.clone();
        hessian_diag.extend(std::iter::repeat_n(2.0 * self.slack_weight, s));
        let mut linear_term: Vec<f64> = u_nom.iter().zip(&self.action_weights).map(|(v, w)| -w * v).collect();
        linear_term.extend(std::iter::repeat_n(0.0, s));
        let mut ineq_normals = Vec::with_capacity(s);
        let mut ineq_offsets = Vec::with_capacity(s);
        for (k, &j) in in_qp.iter().enumerate() {
            let mut normal = vec![0.0; dim];
            normal[..m].copy_from_slice(&rows[j].a);
            normal[m + k] = 1.0;
            ineq_normals.push(normal);
            ineq_offsets.push(rows[j].b);
        }
        let mut lower_bounds = self.action_box.lower.clone();
        lower_bounds.extend(std::iter::repeat_n(0.0, s));
        let mut upper_bounds = self.action_box.upper.clone();
        upper_bounds.extend(std::iter::repeat_n(f64::INFINITY, s));
        let problem = QpProblem { hessian_diag, linear_term, ineq_normals, ineq_offsets, lower_bounds, upper_bounds };
        let qp = solve_qp(&problem, KKT_TOL)?;

        // active bounds can sit a rounding error outside the box
        let u_safe = self.action_box.clamp(&qp.x_star[..m]);
        let mut xi = vec![0.0; rows.len()];
        for (k, &j) in in_qp.iter().enumerate() {
            xi[j] = qp.x_star[m + k].max(0.0);
        }
        for (j, row) in rows.iter().enumerate() {
            if row.inactive_by_infinity() {
                xi[j] = f64::INFINITY;
            } else if row.degenerate {
                let lhs: f64 = row.a.iter().zip(&u_safe).map(|(p, q)| p * q).sum();
                xi[j] = (row.b - lhs).max(0.0);
            }
        }
        let intervention_norm = u_safe.iter().zip(&u_nom).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();

        let certificate = if rows.iter().any(ConstraintRow::inactive_by_infinity) {
            Certificate::InfiniteRho
        } else if rows.iter().any(|r| r.degenerate) {
            Certificate::DegenerateRow
        } else if xi.iter().any(|v| *v > SLACK_TOL) {
            Certificate::SlackActive
        } else if rows.iter().any(|r| r.trivially_satisfied && r.h < 0.0) {
            Certificate::TriviallySatisfied
        } else {
            Certificate::Enforced
        };

        Ok(FilterResult {
            u_safe,
            xi,
            intervened: intervention_norm > INTERVENTION_EPS,
            intervention_norm,
            certificate,
            rows,
            qp,
        })
    }
}

/// One-shot constraint assembly; see [`SafetyFilter`] for repeated use.
pub fn assemble_constraints(
    model: &KoopmanModel,
    barriers: &[LiftedBarrier],
    z: &[f64],
    action_box: &ActionBox,
) -> Result<Vec<ConstraintRow>, FilterError> {
    if z.len() != model.lifted_dim() {
        return Err(FilterError::Dimension(format!("z has {} entries, expected {}", z.len(), model.lifted_dim())));
    }
    Ok(SafetyFilter::new(model, barriers.to_vec(), action_box.clone(), DEFAULT_SLACK_WEIGHT)?.assemble(z))
}

/// One-shot filter; see [`SafetyFilter`] for repeated use.
pub fn filter_action(
    model: &KoopmanModel,
    barriers: &[LiftedBarrier],
    z: &[f64],
    u_nom: &[f64],
    action_box: &ActionBox,
    slack_weight: f64,
) -> Result<FilterResult, FilterError> {
    if z.len() != model.lifted_dim() {
        return Err(FilterError::Dimension(format!("z has {} entries, expected {}", z.len(), model.lifted_dim())));
    }
    SafetyFilter::new(model, barriers.to_vec(), action_box.clone(), slack_weight)?.filter(z, u_nom)
}
