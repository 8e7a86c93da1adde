use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::safety_filter::{Certificate, Regime, RegimeReport, SLACK_TOL};

/// One executed step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    /// Plant state before the action.
    pub state: Vec<f64>,
    pub u_nom: Vec<f64>,
    pub u_safe: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    /// Barrier values on the true successor state.
    pub h: Vec<f64>,
    /// Slack per barrier; empty when no filter ran.
    pub xi: Vec<f64>,
    pub intervened: bool,
    pub intervention_norm: f64,
    pub certificate: Option<Certificate>,
    pub regimes: Vec<RegimeReport>,
}

/// Row-level regime counts accumulated over steps and barriers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeHistogram {
    pub filter_active: usize,
    pub infeasible_proneness: usize,
    pub trivially_satisfied: usize,
    /// Trivially satisfied rows whose barrier was already negative.
    pub trivially_satisfied_unsafe: usize,
}

impl RegimeHistogram {
    pub fn record(&mut self, report: &RegimeReport) {
        match report.regime {
            Regime::FilterActive => self.filter_active += 1,
            Regime::InfeasibleProneness => self.infeasible_proneness += 1,
            Regime::TriviallySatisfied if report.unsafe_state => self.trivially_satisfied_unsafe += 1,
            Regime::TriviallySatisfied => self.trivially_satisfied += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.filter_active + self.infeasible_proneness + self.trivially_satisfied + self.trivially_satisfied_unsafe
    }

    pub fn merge(&mut self, other: &Self) {
        self.filter_active += other.filter_active;
        self.infeasible_proneness += other.infeasible_proneness;
        self.trivially_satisfied += other.trivially_satisfied;
        self.trivially_satisfied_unsafe += other.trivially_satisfied_unsafe;
    }

    /// Share of rows that were trivially satisfied in an unsafe state.
    pub fn unsafe_trivial_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.trivially_satisfied_unsafe as f64 / self.total() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDiagnostics {
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub violation_rate: f64,
    pub intervention_rate: f64,
    pub slack_rate: f64,
    pub min_h: f64,
    pub regimes: RegimeHistogram,
    /// The step counts behind the rates, for pooling across episodes.
    pub counts: StepCounts,
}

/// Step-count counters that can be pooled across episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCounts {
    pub steps: usize,
    pub violations: usize,
    pub interventions: usize,
    pub slack_steps: usize,
}

impl StepCounts {
    pub fn of(log: &[StepLog]) -> Self {
        Self {
            steps: log.len(),
            violations: log.iter().filter(|s| violated(s)).count(),
            interventions: log.iter().filter(|s| s.intervened).count(),
            slack_steps: log.iter().filter(|s| slack_active(s)).count(),
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.steps += other.steps;
        self.violations += other.violations;
        self.interventions += other.interventions;
        self.slack_steps += other.slack_steps;
    }

    fn frac(&self, k: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            k as f64 / self.steps as f64
        }
    }

    pub fn violation_rate(&self) -> f64 {
        self.frac(self.violations)
    }

    pub fn intervention_rate(&self) -> f64 {
        self.frac(self.interventions)
    }

    pub fn slack_rate(&self) -> f64 {
        self.frac(self.slack_steps)
    }
}

pub fn violated(step: &StepLog) -> bool {
    step.h.iter().any(|h| *h < 0.0)
}

pub fn slack_active(step: &StepLog) -> bool {
    step.xi.iter().any(|x| *x > SLACK_TOL)
}

/// Per-episode metrics as exact step-count fractions. `min_h` is taken over
/// the true-state barrier values of every logged successor.
pub fn compute_diagnostics(log: &[StepLog]) -> Result<EpisodeDiagnostics, ExperimentError> {
    if log.is_empty() {
        return Err(ExperimentError::EmptyLog);
    }
    let counts = StepCounts::of(log);
    let mut regimes = RegimeHistogram::default();
    for r in log.iter().flat_map(|s| &s.regimes) {
        regimes.record(r);
    }
    Ok(EpisodeDiagnostics {
        steps: log.len(),
        episode_return: log.iter().map(|s| s.reward).sum(),
        violation_rate: counts.violation_rate(),
        intervention_rate: counts.intervention_rate(),
        slack_rate: counts.slack_rate(),
        min_h: log.iter().flat_map(|s| s.h.iter().copied()).fold(f64::INFINITY, f64::min),
        regimes,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(h: f64, xi: f64, intervened: bool) -> StepLog {
        StepLog {
            step: 0,
            state: vec![],
            u_nom: vec![0.0],
            u_safe: vec![0.0],
            reward: 1.0,
            cost: if h < 0.0 { 1.0 } else { 0.0 },
            h: vec![h, 1.0],
            xi: vec![xi],
            intervened,
            intervention_norm: 0.0,
            certificate: None,
            regimes: vec![],
        }
    }

    #[test]
    fn clean_log_has_zero_rates() {
        let d = compute_diagnostics(&vec![step(0.5, 0.0, false); 4]).unwrap();
        assert_eq!((d.violation_rate, d.intervention_rate, d.slack_rate), (0.0, 0.0, 0.0));
        assert_eq!(d.min_h, 0.5);
        assert_eq!(d.episode_return, 4.0);
    }

    #[test]
    fn counts_violating_steps() {
        let log: Vec<_> = (0..10).map(|i| step(if i % 3 == 0 && i > 0 { -0.1 } else { 0.2 }, 0.0, false)).collect();
        let d = compute_diagnostics(&log).unwrap();
        assert_eq!(d.violation_rate, 0.3);
        assert_eq!(d.min_h, -0.1);
    }

    #[test]
    fn slack_threshold_and_interventions() {
        let log = vec![step(1.0, 1e-9, true), step(1.0, 2e-8, false)];
        let d = compute_diagnostics(&log).unwrap();
        assert_eq!(d.slack_rate, 0.5);
        assert_eq!(d.intervention_rate, 0.5);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(compute_diagnostics(&[]), Err(ExperimentError::EmptyLog)));
    }

    #[test]
    fn histogram_separates_unsafe_trivial_rows() {
        let mut h = RegimeHistogram::default();
        h.record(&RegimeReport { regime: Regime::TriviallySatisfied, unsafe_state: true });
        h.record(&RegimeReport { regime: Regime::TriviallySatisfied, unsafe_state: false });
        h.record(&RegimeReport { regime: Regime::FilterActive, unsafe_state: false });
        h.record(&RegimeReport { regime: Regime::InfeasibleProneness, unsafe_state: false });
        assert_eq!(h.total(), 4);
        assert_eq!(h.unsafe_trivial_fraction(), 0.25);
    }
}
