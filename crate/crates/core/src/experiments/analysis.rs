use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{fmt, CsvArtifact, RunSummary, RHO_COLUMNS};
use super::config::RunConfig;
use super::pipeline::run_pipeline;
use super::ExperimentError;

pub const ABLATION_COLUMNS: [&str; 7] =
    ["eta", "run_id", "return", "violation_rate", "intervention_rate", "slack_rate", "min_h"];

/// Seed-averaged final metrics of one decay setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub eta: f64,
    pub run_id: String,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub violation_rate: f64,
    pub intervention_rate: f64,
    pub slack_rate: f64,
    pub min_h: f64,
}

/// Reruns the pipeline once per decay value (applied to every barrier) and
/// tabulates the final evaluation into `<out>/ablation_eta.csv`.
pub fn ablation_eta(base: &RunConfig, etas: &[f64], out: &Path) -> Result<Vec<AblationRow>, ExperimentError> {
    if etas.is_empty() {
        return Err(ExperimentError::InvalidConfig("no eta values to ablate".into()));
    }
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(ExperimentError::InvalidConfig(format!("eta {e} outside (0, 1]")));
    }
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut cfg = base.clone();
        cfg.eta = vec![eta];
        let dir = run_pipeline(&cfg, out)?;
        let summary = RunSummary::load(&dir.join("summary.json"))?;
        let agg = summary
            .aggregate
            .ok_or_else(|| ExperimentError::InvalidConfig("ablation needs a positive budget".into()))?;
        rows.push(AblationRow {
            eta,
            run_id: summary.run_id,
            episode_return: agg.episode_return.mean,
            violation_rate: agg.violation_rate.mean,
            intervention_rate: agg.intervention_rate.mean,
            slack_rate: agg.slack_rate.mean,
            min_h: agg.min_h.mean,
        });
    }
    let mut w = CsvArtifact::create(&out.join("ablation_eta.csv"), "ablation_eta", &base.hash(), &ABLATION_COLUMNS)?;
    for r in &rows {
        w.row([
            fmt(r.eta),
            r.run_id.clone(),
            fmt(r.episode_return),
            fmt(r.violation_rate),
            fmt(r.intervention_rate),
            fmt(r.slack_rate),
            fmt(r.min_h),
        ])?;
    }
    w.finish()?;
    Ok(rows)
}

/// For each pair of adjacent decays `η_a < η_b`, the tighter `η_a` has a
/// slack or intervention rate at least as large as that of `η_b`.
pub fn tighter_eta_raises_slack_or_intervention(rows: &[AblationRow]) -> bool {
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    sorted.windows(2).all(|w| w[0].slack_rate >= w[1].slack_rate || w[0].intervention_rate >= w[1].intervention_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub run_id: String,
    pub env: String,
    /// Label of the barrier with the largest margin.
    pub barrier: String,
    pub rho: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RankTest {
    Passed,
    Failed(String),
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub rows: Vec<RhoRow>,
    pub rank_test: RankTest,
}

/// Expected margin order of the plant families, smallest first.
fn family_rank(env: &str) -> Option<usize> {
    if env.starts_with("cartpole") {
        Some(0)
    } else if env.starts_with("quadrotor") {
        Some(1)
    } else if env == "synthetic_contact" {
        Some(2)
    } else {
        None
    }
}

/// Pairs each run's largest seed-averaged margin with its final violation
/// rate, writes `<out>` as CSV and checks that margins increase from
/// CartPole to quadrotor to the contact plant.
pub fn rho_effect_report(runs: &[PathBuf], out: &Path) -> Result<RhoReport, ExperimentError> {
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        let s = RunSummary::load(&dir.join("summary.json"))?;
        let labels = &s.seeds.first().map(|seed| seed.barriers.clone()).unwrap_or_default();
        let (j, rho) = s
            .rho
            .iter()
            .enumerate()
            .map(|(j, m)| (j, if m.mean.is_nan() { f64::INFINITY } else { m.mean }))
            .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        rows.push(RhoRow {
            run_id: s.run_id.clone(),
            env: s.env.clone(),
            barrier: labels.get(j).map_or_else(String::new, |b| b.label.clone()),
            rho,
            violation_rate: s.aggregate.as_ref().map_or(f64::NAN, |a| a.violation_rate.mean),
        });
    }
    let mut w = CsvArtifact::create(out, "rho_effect", "report", &RHO_COLUMNS)?;
    for r in &rows {
        w.row([r.run_id.clone(), r.env.clone(), r.barrier.clone(), fmt(r.rho), fmt(r.violation_rate)])?;
    }
    w.finish()?;
    let rank_test = rank_test(&rows);
    Ok(RhoReport { rows, rank_test })
}

/// Every row of a lower-ranked family must have a strictly smaller margin
/// than every row of a higher-ranked one.
pub fn rank_test(rows: &[RhoRow]) -> RankTest {
    let ranked: Vec<(usize, &RhoRow)> = rows.iter().filter_map(|r| family_rank(&r.env).map(|k| (k, r))).collect();
    let families: std::collections::BTreeSet<usize> = ranked.iter().map(|(k, _)| *k).collect();
    if families.len() < 2 {
        return RankTest::Skipped("fewer than two plant families".into());
    }
    for (ka, a) in &ranked {
        for (kb, b) in &ranked {
            if ka >= kb {
                continue;
            }
            if a.rho == b.rho {
                return RankTest::Skipped(format!("{} and {} have equal margins", a.run_id, b.run_id));
            }
            if a.rho > b.rho {
                return RankTest::Failed(format!("{} (rho {}) >= {} (rho {})", a.run_id, a.rho, b.run_id, b.rho));
            }
        }
    }
    RankTest::Passed
}
