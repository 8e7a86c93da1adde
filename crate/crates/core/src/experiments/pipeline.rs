use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::artifacts::{
    fmt, write_json, BarrierSummary, CsvArtifact, EvalSummary, ModelSummary, RunSummary, SeedSummary, TrainingSummary,
    EPISODE_COLUMNS, METRICS_COLUMNS, SUMMARY_FORMAT_VERSION,
};
use super::config::{BarrierKind, NominalKind, RunConfig};
use super::data::{collect_transitions, random_action, split_calibration, Controller, TransitionSet, TRANSITIONS_FORMAT_VERSION};
use super::diagnostics::{compute_diagnostics, EpisodeDiagnostics, StepCounts, StepLog};
use super::ExperimentError;
use crate::agent::{Batch, ReplayBuffer, ReplayRecord, SacAgent};
use crate::barrier::{
    bound_barrier, calibrate_rho, check_authority, composite_barrier, BoundDirection, CalibrationReport, LiftedBarrier,
    LiftedSpace,
};
use crate::envs::{Env, EnvSpec, StepOutcome};
use crate::koopman::{fit_centers, fit_model, KoopmanModel, Transition};
use crate::safety_filter::{classify_regime, FilterTrace, SafetyFilter, TraceRecord, INTERVENTION_EPS, SLACK_TOL};

/// Independent random streams drawn from one seed.
const STREAM_COLLECT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fitted model, calibrated barriers and the bookkeeping behind them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: KoopmanModel,
    pub barriers: Vec<LiftedBarrier>,
    pub calibration: CalibrationReport,
    pub n_fit: usize,
    pub n_cal: usize,
}

impl Prepared {
    pub fn filter(&self, config: &RunConfig, spec: &EnvSpec) -> Result<SafetyFilter, ExperimentError> {
        Ok(SafetyFilter::new(&self.model, self.barriers.clone(), spec.action_box.clone(), config.slack_weight)?.normalized()?)
    }

    fn barrier_summaries(&self, config: &RunConfig) -> Vec<BarrierSummary> {
        self.barriers
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let (authority, degenerate) = check_authority(b, &self.model);
                BarrierSummary {
                    label: b.label.clone(),
                    eta: config.eta_for(j),
                    rho: b.rho,
                    authority,
                    degenerate,
                    coverage_exceedance: self.calibration.barriers[j].coverage.exceedance_rate(),
                }
            })
            .collect()
    }

    fn model_summary(&self, config: &RunConfig) -> ModelSummary {
        ModelSummary {
            lifted_dim: self.model.lifted_dim(),
            num_rbf: config.num_rbf,
            fit_mse1: self.model.fit_mse1,
            fit_mse_h: self.model.fit_mse_h,
            n_fit: self.n_fit,
            n_cal: self.n_cal,
        }
    }
}

/// One lifted barrier per environment constraint, uncalibrated.
pub fn build_barriers(config: &RunConfig, spec: &EnvSpec, space: LiftedSpace) -> Result<Vec<LiftedBarrier>, ExperimentError> {
    spec.constraints
        .iter()
        .enumerate()
        .map(|(j, con)| {
            let barrier = match config.barrier {
                BarrierKind::Bound => bound_barrier(space, con.coordinate, con.bound, con.direction)?,
                BarrierKind::Composite => {
                    let rate = con.rate_index.ok_or_else(|| {
                        ExperimentError::InvalidConfig(format!("constraint {j} of {} has no rate coordinate", spec.name))
                    })?;
                    let (a, b) = (config.composite_alpha, config.composite_beta);
                    let lower = composite_barrier(space, con.coordinate, rate, con.bound, a, b)?;
                    match con.direction {
                        BoundDirection::Lower => lower,
                        // α (bound − y) − β ẏ is the mirror image of the lower form
                        BoundDirection::Upper => LiftedBarrier::new(
                            lower.c.iter().map(|v| -v).collect(),
                            -lower.d,
                            format!("{a}*({}-x{})-{b}*x{rate}", con.bound, con.coordinate),
                        )?,
                    }
                }
            };
            Ok(barrier.with_eta(config.eta_for(j))?)
        })
        .collect()
}

/// Behaviour-policy data for one seed.
pub fn collect(config: &RunConfig, seed: u64) -> Result<TransitionSet, ExperimentError> {
    Ok(TransitionSet {
        format_version: TRANSITIONS_FORMAT_VERSION,
        config_hash: config.hash(),
        seed,
        transitions: collect_transitions(config, &mut seeded_stream(seed, STREAM_COLLECT))?,
    })
}

/// Rebuilds the calibrated barriers from a seed directory's `model.json`
/// and `calibration.json`.
pub fn load_prepared(config: &RunConfig, dir: &Path) -> Result<Prepared, ExperimentError> {
    let model = KoopmanModel::load(&dir.join("model.json"))?;
    let calibration = CalibrationReport::load(&dir.join("calibration.json"))?;
    let spec = Env::make(&config.env)?.spec().clone();
    let mut barriers = build_barriers(config, &spec, LiftedSpace::from(&model.dictionary))?;
    calibration.apply(&mut barriers)?;
    let n_cal = calibration.n_cal;
    Ok(Prepared { model, barriers, calibration, n_fit: 0, n_cal })
}

/// Evaluates the artifacts in a seed directory: the saved agent checkpoint
/// for agent runs, the model-based controller otherwise. Writes `eval.json`.
pub fn evaluate_saved(config: &RunConfig, seed: u64, dir: &Path, episodes: usize) -> Result<EvalSummary, ExperimentError> {
    let prepared = load_prepared(config, dir)?;
    let env = Env::make(&config.env)?;
    let filter = prepared.filter(config, env.spec())?;
    let stepper = Stepper { model: &prepared.model, filter: &filter, apply_filter: config.filter };
    let controller = Controller::for_env(&env, config.nominal)?;
    let agent = match config.nominal {
        NominalKind::Agent => {
            let (agent, hash) = SacAgent::load_checkpoint(&dir.join("checkpoint.json"))?;
            if hash != config.hash() {
                return Err(ExperimentError::Schema(format!("checkpoint was trained under config {hash}")));
            }
            Some(agent)
        }
        _ => None,
    };
    let policy = match (&agent, &controller) {
        (Some(a), _) => Policy::Greedy(a),
        (None, Some(c)) => Policy::Nominal(c),
        (None, None) => unreachable!("a nominal run always has a controller"),
    };
    let eval = evaluate(config, seed, &stepper, &policy, episodes.max(1), 0, None)?;
    let diags: Vec<EpisodeDiagnostics> = eval.into_iter().map(|e| e.diagnostics).collect();
    let summary = EvalSummary::from_episodes(&diags);
    write_json(&dir.join("eval.json"), &summary)?;
    Ok(summary)
}

/// Directory holding one seed's artifacts.
pub fn seed_dir(out: &Path, config: &RunConfig, seed: u64) -> PathBuf {
    out.join(config.run_id()).join(format!("seed-{seed}"))
}

/// Collects data, splits off the calibration set, fits the lifted model and
/// calibrates one margin per barrier.
pub fn prepare(config: &RunConfig, seed: u64) -> Result<Prepared, ExperimentError> {
    let data = collect_transitions(config, &mut seeded_stream(seed, STREAM_COLLECT))?;
    prepare_from(config, seed, &data)
}

pub fn prepare_from(config: &RunConfig, seed: u64, data: &[Transition]) -> Result<Prepared, ExperimentError> {
    let model = fit_from(config, seed, data)?;
    calibrate_from(config, seed, data, model)
}

/// Fits the dictionary and lifted matrices on the fit split of `data`.
pub fn fit_from(config: &RunConfig, seed: u64, data: &[Transition]) -> Result<KoopmanModel, ExperimentError> {
    let split = split_calibration(data.len(), config.calibration_size, &mut seeded_stream(seed, STREAM_SPLIT));
    let fit: Vec<Transition> = split.fit.iter().map(|&i| data[i].clone()).collect();
    let states: Vec<Vec<f64>> = fit.iter().map(|t| t.y.clone()).collect();
    let dictionary = fit_centers(&states, config.num_rbf, seed)?;
    Ok(fit_model(&dictionary, &fit, config.ridge_lambda)?)
}

/// Builds barriers under `model` and calibrates them on the held-out split.
pub fn calibrate_from(
    config: &RunConfig,
    seed: u64,
    data: &[Transition],
    model: KoopmanModel,
) -> Result<Prepared, ExperimentError> {
    let split = split_calibration(data.len(), config.calibration_size, &mut seeded_stream(seed, STREAM_SPLIT));
    let cal: Vec<Transition> = split.calibration.iter().map(|&i| data[i].clone()).collect();
    let spec = Env::make(&config.env)?.spec().clone();
    let mut barriers = build_barriers(config, &spec, LiftedSpace::from(&model.dictionary))?;
    let calibration = calibrate_rho(&model, &barriers, &cal, config.quantile_level, config.calibration_mode)?;
    calibration.apply(&mut barriers)?;
    for b in &barriers {
        check_authority(b, &model);
    }
    Ok(Prepared { model, barriers, calibration, n_fit: split.fit.len(), n_cal: split.calibration.len() })
}

/// Where proposals come from during a rollout.
pub enum Policy<'a> {
    Nominal(&'a Controller),
    /// Squashed mean of the actor.
    Greedy(&'a SacAgent),
}

impl Policy<'_> {
    fn act(&self, env: &Env) -> Vec<f64> {
        match self {
            Policy::Nominal(c) => c.act(env),
            Policy::Greedy(a) => a.deterministic_action(&env.observation()),
        }
    }
}

/// Executes one step: lifts the modeling state, optionally filters the
/// proposal, applies the executed action and logs the outcome.
pub struct Stepper<'a> {
    pub model: &'a KoopmanModel,
    pub filter: &'a SafetyFilter,
    pub apply_filter: bool,
}

pub struct Executed {
    pub z: Vec<f64>,
    pub outcome: StepOutcome,
    pub log: StepLog,
    pub trace: Option<TraceRecord>,
}

impl Stepper<'_> {
    pub fn step(&self, env: &mut Env, u_nom: Vec<f64>) -> Result<Executed, ExperimentError> {
        let box_ = self.filter.action_box();
        let state = env.state().to_vec();
        let z = self.model.lift(&env.modeling_state());
        let rows = self.filter.assemble(&z);
        let regimes = classify_regime(&rows, box_);
        let step = env.step_index();
        let (u_safe, xi, intervened, intervention_norm, certificate, trace) = if self.apply_filter {
            let r = self.filter.filter_rows(rows, &u_nom)?;
            let trace = TraceRecord::from_result(step as u64, &r);
            (r.u_safe, r.xi, r.intervened, r.intervention_norm, Some(r.certificate), Some(trace))
        } else {
            (box_.clamp(&u_nom), Vec::new(), false, 0.0, None, None)
        };
        let outcome = env.step(&u_safe)?;
        let log = StepLog {
            step,
            state,
            u_nom,
            u_safe,
            reward: outcome.reward,
            cost: outcome.cost,
            h: outcome.info.h.clone(),
            xi,
            intervened,
            intervention_norm,
            certificate,
            regimes,
        };
        Ok(Executed { z, outcome, log, trace })
    }
}

/// Plays one episode from a fresh reset.
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut Env,
    stepper: &Stepper,
    policy: &Policy,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<(Vec<StepLog>, bool), ExperimentError> {
    env.reset(rng);
    let mut log = Vec::with_capacity(env.spec().horizon);
    loop {
        let u_nom = policy.act(env);
        let ex = stepper.step(env, u_nom)?;
        if let (Some(buf), Some(rec)) = (trace.as_deref_mut(), ex.trace) {
            buf.push(rec);
        }
        log.push(ex.log);
        if ex.outcome.done() {
            return Ok((log, ex.outcome.terminated));
        }
    }
}

/// Diagnostics for one evaluation episode plus its raw log.
pub struct EvalEpisode {
    pub diagnostics: EpisodeDiagnostics,
    pub terminated: bool,
    pub log: Vec<StepLog>,
}

/// Deterministic evaluation over `episodes` resets drawn from the seed's
/// evaluation stream, so every checkpoint sees the same initial states.
pub fn evaluate(
    config: &RunConfig,
    seed: u64,
    stepper: &Stepper,
    policy: &Policy,
    episodes: usize,
    keep_logs: usize,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<Vec<EvalEpisode>, ExperimentError> {
    let mut env = Env::make(&config.env)?;
    let mut rng = seeded_stream(seed, STREAM_EVAL);
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let t = if k == 0 { trace.as_deref_mut() } else { None };
        let (log, terminated) = run_episode(&mut env, stepper, policy, &mut rng, t)?;
        let diagnostics = compute_diagnostics(&log)?;
        out.push(EvalEpisode { diagnostics, terminated, log: if k < keep_logs { log } else { Vec::new() } });
    }
    Ok(out)
}

/// Everything one seed produced.
pub struct SeedRun {
    pub summary: SeedSummary,
    pub dir: PathBuf,
}

fn episode_row(seed: u64, phase: &str, episode: usize, env_step: usize, d: &EpisodeDiagnostics, terminated: bool) -> Vec<String> {
    vec![
        seed.to_string(),
        phase.to_string(),
        episode.to_string(),
        env_step.to_string(),
        d.steps.to_string(),
        fmt(d.episode_return),
        fmt(d.violation_rate),
        fmt(d.intervention_rate),
        fmt(d.slack_rate),
        fmt(d.min_h),
        d.regimes.filter_active.to_string(),
        d.regimes.infeasible_proneness.to_string(),
        d.regimes.trivially_satisfied.to_string(),
        d.regimes.trivially_satisfied_unsafe.to_string(),
        (terminated as u8).to_string(),
    ]
}

fn metrics_row(seed: u64, step: usize, eval: &[EvalEpisode]) -> Vec<String> {
    let diags: Vec<EpisodeDiagnostics> = eval.iter().map(|e| e.diagnostics.clone()).collect();
    let s = EvalSummary::from_episodes(&diags);
    let mean_min_h = diags.iter().map(|d| d.min_h).sum::<f64>() / diags.len().max(1) as f64;
    vec![
        seed.to_string(),
        step.to_string(),
        s.episodes.to_string(),
        fmt(s.return_mean),
        fmt(s.return_std),
        fmt(s.violation_rate),
        fmt(s.intervention_rate),
        fmt(s.slack_rate),
        fmt(s.min_h),
        fmt(mean_min_h),
    ]
}

/// Column names of the per-step rollout log for an environment.
pub fn rollout_columns(spec: &EnvSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    cols.extend((0..spec.state_dim).map(|i| format!("x_{i}")));
    cols.extend((0..spec.action_dim).map(|i| format!("u_nom_{i}")));
    cols.extend((0..spec.action_dim).map(|i| format!("u_safe_{i}")));
    cols.push("reward".into());
    cols.push("cost".into());
    cols.extend((0..spec.constraints.len()).map(|j| format!("h_{j}")));
    cols
}

fn write_rollout(path: &Path, hash: &str, spec: &EnvSpec, log: &[StepLog]) -> Result<(), ExperimentError> {
    let cols = rollout_columns(spec);
    let mut w = CsvArtifact::create(path, "rollout", hash, &cols.iter().map(String::as_str).collect::<Vec<_>>())?;
    for s in log {
        let mut row = vec![s.step.to_string()];
        row.extend(s.state.iter().chain(&s.u_nom).chain(&s.u_safe).map(|v| fmt(*v)));
        row.push(fmt(s.reward));
        row.push(fmt(s.cost));
        row.extend(s.h.iter().map(|v| fmt(*v)));
        w.row(row)?;
    }
    w.finish()
}

fn write_trace(path: &Path, hash: &str, labels: &[String], records: &[TraceRecord]) -> Result<(), ExperimentError> {
    let preamble = [super::artifacts::csv_preamble("trace", hash)];
    let mut t = FilterTrace::new(BufWriter::new(File::create(path)?), labels, &preamble)?;
    for r in records {
        t.write(r)?;
    }
    t.finish()?;
    Ok(())
}

/// Runs one seed end to end, writing artifacts into `dir`. On failure the
/// artifacts written so far are kept and `failure.json` records the error.
pub fn run_seed(config: &RunConfig, seed: u64, dir: &Path) -> Result<SeedRun, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    match run_seed_inner(config, seed, dir) {
        Ok(summary) => {
            let _ = std::fs::remove_file(dir.join("failure.json"));
            Ok(SeedRun { summary, dir: dir.to_path_buf() })
        }
        Err(e) => {
            let record = serde_json::json!({ "seed": seed, "error": e.to_string() });
            let _ = std::fs::write(dir.join("failure.json"), record.to_string());
            Err(e)
        }
    }
}

fn run_seed_inner(config: &RunConfig, seed: u64, dir: &Path) -> Result<SeedSummary, ExperimentError> {
    let hash = config.hash();
    let mut prepared = prepare(config, seed)?;
    prepared.model.save(&dir.join("model.json"))?;
    prepared.calibration.save(&dir.join("calibration.json"))?;

    let mut env = Env::make(&config.env)?;
    let spec = env.spec().clone();
    let filter = prepared.filter(config, &spec)?;
    let stepper = Stepper { model: &prepared.model, filter: &filter, apply_filter: config.filter };
    let controller = Controller::for_env(&env, config.nominal)?;

    let mut summary = SeedSummary {
        format_version: SUMMARY_FORMAT_VERSION,
        config_hash: hash.clone(),
        env: config.env.clone(),
        seed,
        filter: config.filter,
        nominal: format!("{:?}", config.nominal).to_lowercase(),
        intervention_eps: INTERVENTION_EPS,
        slack_tol: SLACK_TOL,
        model: prepared.model_summary(config),
        barriers: prepared.barrier_summaries(config),
        training: None,
        final_eval: None,
    };
    if config.budget == 0 {
        write_json(&dir.join("summary.json"), &summary)?;
        return Ok(summary);
    }

    let mut metrics = CsvArtifact::create(&dir.join("metrics.csv"), "metrics", &hash, &METRICS_COLUMNS)?;
    let mut episodes = CsvArtifact::create(&dir.join("episodes.csv"), "episodes", &hash, &EPISODE_COLUMNS)?;

    let mut agent = (config.nominal == NominalKind::Agent)
        .then(|| SacAgent::new(spec.observation_dim, &spec.action_box, config.agent.clone(), seed));
    let mut buffer = ReplayBuffer::new(config.agent.buffer_capacity, spec.action_box.clone());
    let mut rng = seeded_stream(seed, STREAM_TRAIN);

    let mut obs = env.reset(&mut rng);
    let mut episode_log: Vec<StepLog> = Vec::new();
    let mut train_counts = StepCounts::default();
    let mut train_episodes = 0usize;
    for t in 0..config.budget {
        let u_nom = match (&mut agent, &controller) {
            (Some(_), _) if t < config.warmup_steps => random_action(&env, &mut rng),
            (Some(a), _) => a.act(&obs),
            (None, Some(c)) => c.act(&env),
            (None, None) => unreachable!("a nominal run always has a controller"),
        };
        let ex = stepper.step(&mut env, u_nom)?;
        let out = &ex.outcome;
        let z_next = prepared.model.lift(&out.modeling_state);
        let r = prepared.model.predict(&ex.z, &ex.log.u_safe);
        let residual: Vec<f64> = z_next.iter().zip(&r).map(|(a, b)| a - b).collect();
        for (j, b) in prepared.barriers.iter().enumerate() {
            prepared.calibration.record_projected(j, b.project(&residual).abs());
        }
        if agent.is_some() {
            let record = ReplayRecord {
                s: obs.clone(),
                z: ex.z.clone(),
                u_nom: ex.log.u_nom.clone(),
                u_safe: ex.log.u_safe.clone(),
                reward: out.reward,
                s_next: out.observation.clone(),
                z_next,
                done: out.terminated,
            };
            buffer.push(record, &out.applied_action)?;
        }
        let done = out.done();
        let terminated = out.terminated;
        obs = out.observation.clone();
        episode_log.push(ex.log);
        if done {
            let d = compute_diagnostics(&episode_log)?;
            train_counts.add(&d.counts);
            episodes.row(episode_row(seed, "train", train_episodes, t + 1, &d, terminated))?;
            train_episodes += 1;
            episode_log.clear();
            obs = env.reset(&mut rng);
        }

        if let Some(a) = agent.as_mut() {
            let ready = t + 1 >= config.warmup_steps && buffer.len() >= config.agent.batch_size;
            if ready && (t + 1) % config.update_every == 0 {
                let idx = buffer.sample_indices(config.agent.batch_size, &mut rng);
                let records: Vec<&ReplayRecord> = idx.iter().map(|&i| buffer.get(i)).collect();
                let batch = Batch::from_records(&records)?;
                a.update(&batch, config.filter.then_some(&filter))?;
            }
        }

        let step = t + 1;
        if step % config.eval_every == 0 || step == config.budget {
            let policy = match (&agent, &controller) {
                (Some(a), _) => Policy::Greedy(a),
                (None, Some(c)) => Policy::Nominal(c),
                (None, None) => unreachable!(),
            };
            let eval = evaluate(config, seed, &stepper, &policy, config.eval_episodes.max(1), 0, None)?;
            metrics.row(metrics_row(seed, step, &eval))?;
            if let Some(a) = &agent {
                a.save_checkpoint(&dir.join("checkpoint.json"), &hash)?;
            }
            log::info!("seed {seed} step {step}: {:?}", EvalSummary::from_episodes(&eval.iter().map(|e| e.diagnostics.clone()).collect::<Vec<_>>()));
        }
    }
    if !episode_log.is_empty() {
        let d = compute_diagnostics(&episode_log)?;
        train_counts.add(&d.counts);
        episodes.row(episode_row(seed, "train", train_episodes, config.budget, &d, false))?;
        train_episodes += 1;
    }

    let policy = match (&agent, &controller) {
        (Some(a), _) => Policy::Greedy(a),
        (None, Some(c)) => Policy::Nominal(c),
        (None, None) => unreachable!(),
    };
    let mut trace = Vec::new();
    let final_eval = evaluate(config, seed, &stepper, &policy, config.final_eval_episodes.max(1), 1, Some(&mut trace))?;
    for (k, e) in final_eval.iter().enumerate() {
        episodes.row(episode_row(seed, "eval", k, config.budget, &e.diagnostics, e.terminated))?;
    }
    metrics.finish()?;
    episodes.finish()?;
    if config.trace {
        write_rollout(&dir.join("rollout.csv"), &hash, &spec, &final_eval[0].log)?;
        if config.filter {
            let labels: Vec<String> = prepared.barriers.iter().map(|b| b.label.clone()).collect();
            write_trace(&dir.join("trace.csv"), &hash, &labels, &trace)?;
        }
    }
    prepared.calibration.save(&dir.join("calibration.json"))?;

    summary.barriers = prepared.barrier_summaries(config);
    summary.training = Some(TrainingSummary {
        steps: config.budget,
        updates: agent.as_ref().map_or(0, |a| a.updates),
        episodes: train_episodes,
        violation_rate: train_counts.violation_rate(),
        intervention_rate: train_counts.intervention_rate(),
        slack_rate: train_counts.slack_rate(),
    });
    let diags: Vec<EpisodeDiagnostics> = final_eval.iter().map(|e| e.diagnostics.clone()).collect();
    summary.final_eval = Some(EvalSummary::from_episodes(&diags));
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs every seed of `config` under `<out>/<run-id>/seed-<n>/` and writes
/// the aggregate `summary.json` plus seed-concatenated CSVs at the top.
pub fn run_pipeline(config: &RunConfig, out: &Path) -> Result<PathBuf, ExperimentError> {
    config.validate()?;
    let root = out.join(config.run_id());
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config.toml"), config.to_toml())?;
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = run_seed(config, seed, &seed_dir(out, config, seed))?;
        seeds.push(run.summary);
    }
    if config.budget > 0 {
        for kind in ["metrics", "episodes"] {
            concat_csv(&root, &config.seeds, kind)?;
        }
    }
    let summary = RunSummary::new(config.run_id(), config.hash(), config.env.clone(), seeds);
    write_json(&root.join("summary.json"), &summary)?;
    Ok(root)
}

fn concat_csv(root: &Path, seeds: &[u64], kind: &str) -> Result<(), ExperimentError> {
    let mut text = String::new();
    for (k, seed) in seeds.iter().enumerate() {
        let body = std::fs::read_to_string(root.join(format!("seed-{seed}")).join(format!("{kind}.csv")))?;
        // keep preamble and header from the first file only
        let skip = if k == 0 { 0 } else { 2 };
        for line in body.lines().skip(skip) {
            text.push_str(line);
            text.push('\n');
        }
    }
    std::fs::write(root.join(format!("{kind}.csv")), text)?;
    Ok(())
}
