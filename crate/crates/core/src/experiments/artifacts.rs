//! On-disk formats shared with downstream tooling.
//!
//! Every CSV starts with one comment line
//! `# schema=<kind> version=<n> config_hash=<hex>` followed by a header row.
//! JSON documents carry `format_version` and `config_hash` fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::diagnostics::{EpisodeDiagnostics, RegimeHistogram, StepCounts};
use super::ExperimentError;
use crate::barrier::Margin;

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const SUMMARY_FORMAT_VERSION: u32 = 1;

pub const METRICS_COLUMNS: [&str; 10] = [
    "seed",
    "step",
    "episodes",
    "return_mean",
    "return_std",
    "violation_rate",
    "intervention_rate",
    "slack_rate",
    "min_h",
    "mean_min_h",
];

pub const EPISODE_COLUMNS: [&str; 15] = [
    "seed",
    "phase",
    "episode",
    "env_step",
    "length",
    "return",
    "violation_rate",
    "intervention_rate",
    "slack_rate",
    "min_h",
    "filter_active",
    "infeasible_proneness",
    "trivially_satisfied",
    "trivially_satisfied_unsafe",
    "terminated",
];

pub const RHO_COLUMNS: [&str; 5] = ["run_id", "env", "barrier", "rho", "violation_rate"];

pub const RETURN_SCALE_NOTE: &str =
    "returns use this toolkit's reward definitions; they are not on any external benchmark's scale";

/// The comment line that opens every CSV artifact.
pub fn csv_preamble(kind: &str, config_hash: &str) -> String {
    format!("# schema={kind} version={CSV_SCHEMA_VERSION} config_hash={config_hash}")
}

/// Parses a preamble into `(kind, version, config_hash)`.
pub fn parse_preamble(line: &str) -> Option<(String, u32, String)> {
    let rest = line.strip_prefix("# ")?;
    let mut kind = None;
    let mut version = None;
    let mut hash = None;
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=')?;
        match k {
            "schema" => kind = Some(v.to_string()),
            "version" => version = v.parse().ok(),
            "config_hash" => hash = Some(v.to_string()),
            _ => {}
        }
    }
    Some((kind?, version?, hash?))
}

/// CSV writer that emits the preamble and header on creation.
pub struct CsvArtifact {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvArtifact {
    pub fn create(path: &Path, kind: &str, config_hash: &str, columns: &[&str]) -> Result<Self, ExperimentError> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{}", csv_preamble(kind, config_hash))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(columns)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), ExperimentError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), ExperimentError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a CSV artifact, checking its schema kind and version.
pub fn read_csv(path: &Path, kind: &str) -> Result<(String, Vec<String>, Vec<Vec<String>>), ExperimentError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (found_kind, version, hash) = parse_preamble(first.trim_end())
        .ok_or_else(|| ExperimentError::Schema(format!("{} has no schema preamble", path.display())))?;
    if found_kind != kind || version != CSV_SCHEMA_VERSION {
        return Err(ExperimentError::Schema(format!(
            "{}: expected {kind} v{CSV_SCHEMA_VERSION}, found {found_kind} v{version}",
            path.display()
        )));
    }
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.iter().map(str::to_string).collect();
    let rows = csv.records().map(|r| r.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
    Ok((hash, header, rows))
}

pub fn fmt(v: f64) -> String {
    v.to_string()
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub lifted_dim: usize,
    pub num_rbf: usize,
    pub fit_mse1: f64,
    pub fit_mse_h: f64,
    pub n_fit: usize,
    pub n_cal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSummary {
    pub label: String,
    pub eta: f64,
    pub rho: Margin,
    /// `‖Bᵀc‖` under the fitted model.
    pub authority: f64,
    pub degenerate: bool,
    /// Deployment exceedance rate of the calibrated margin.
    pub coverage_exceedance: f64,
}

/// Pooled evaluation metrics over a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub steps: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub violation_rate: f64,
    pub intervention_rate: f64,
    pub slack_rate: f64,
    /// Smallest true-state barrier value over all episodes.
    pub min_h: f64,
    pub regimes: RegimeHistogram,
}

impl EvalSummary {
    pub fn from_episodes(episodes: &[EpisodeDiagnostics]) -> Self {
        let mut counts = StepCounts::default();
        for e in episodes {
            counts.add(&e.counts);
        }
        let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
        let ms = MeanStd::of(&returns);
        let mut regimes = RegimeHistogram::default();
        for e in episodes {
            regimes.merge(&e.regimes);
        }
        Self {
            episodes: episodes.len(),
            steps: counts.steps,
            return_mean: ms.mean,
            return_std: ms.std,
            violation_rate: counts.violation_rate(),
            intervention_rate: counts.intervention_rate(),
            slack_rate: counts.slack_rate(),
            min_h: episodes.iter().map(|e| e.min_h).fold(f64::INFINITY, f64::min),
            regimes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub updates: u64,
    pub episodes: usize,
    pub violation_rate: f64,
    pub intervention_rate: f64,
    pub slack_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub env: String,
    pub seed: u64,
    pub filter: bool,
    pub nominal: String,
    pub intervention_eps: f64,
    pub slack_tol: f64,
    pub model: ModelSummary,
    pub barriers: Vec<BarrierSummary>,
    pub training: Option<TrainingSummary>,
    pub final_eval: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    #[serde(rename = "return")]
    pub episode_return: MeanStd,
    pub violation_rate: MeanStd,
    pub intervention_rate: MeanStd,
    pub slack_rate: MeanStd,
    pub min_h: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub config_hash: String,
    pub run_id: String,
    pub env: String,
    pub return_scale: String,
    /// Calibrated margin per barrier across seeds (finite margins only).
    pub rho: Vec<MeanStd>,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Option<AggregateSummary>,
}

impl RunSummary {
    pub fn new(run_id: String, config_hash: String, env: String, seeds: Vec<SeedSummary>) -> Self {
        let nb = seeds.first().map_or(0, |s| s.barriers.len());
        let rho = (0..nb)
            .map(|j| {
                let vals: Vec<f64> =
                    seeds.iter().map(|s| s.barriers[j].rho).filter(|m| !m.is_infinite()).map(Margin::value).collect();
                MeanStd::of(&vals)
            })
            .collect();
        let finals: Vec<&EvalSummary> = seeds.iter().filter_map(|s| s.final_eval.as_ref()).collect();
        let aggregate = (!finals.is_empty()).then(|| {
            let col = |f: fn(&EvalSummary) -> f64| MeanStd::of(&finals.iter().map(|e| f(e)).collect::<Vec<_>>());
            AggregateSummary {
                episode_return: col(|e| e.return_mean),
                violation_rate: col(|e| e.violation_rate),
                intervention_rate: col(|e| e.intervention_rate),
                slack_rate: col(|e| e.slack_rate),
                min_h: col(|e| e.min_h),
            }
        });
        Self {
            format_version: SUMMARY_FORMAT_VERSION,
            config_hash,
            run_id,
            env,
            return_scale: RETURN_SCALE_NOTE.to_string(),
            rho,
            seeds,
            aggregate,
        }
    }

    /// Largest finite calibrated margin over barriers and seeds, or infinity
    /// when any margin is infinite.
    pub fn max_rho(&self) -> f64 {
        self.seeds.iter().flat_map(|s| s.barriers.iter().map(|b| b.rho.value())).fold(0.0, f64::max)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.format_version != SUMMARY_FORMAT_VERSION {
            return Err(ExperimentError::Schema(format!(
                "summary format version {} (expected {SUMMARY_FORMAT_VERSION})",
                s.format_version
            )));
        }
        Ok(s)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
