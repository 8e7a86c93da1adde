use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kcbf_core::experiments::{
    ablation_eta, calibrate_from, collect, evaluate_saved, fit_from, rho_effect_report, run_pipeline, seed_dir,
    tighter_eta_raises_slack_or_intervention, NominalKind, RankTest, RunConfig, RunSummary, TransitionSet,
};
use kcbf_core::koopman::KoopmanModel;

#[derive(Parser)]
#[command(name = "kcbf", version, about = "Koopman lifted barrier filters for safe control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gather behaviour-policy transitions for each seed.
    Collect(RunArgs),
    /// Fit the lifted model on the fit split.
    Fit(RunArgs),
    /// Calibrate barrier margins on the held-out split.
    Calibrate(RunArgs),
    /// Run the full pipeline, training the agent when the nominal is `agent`.
    Train(RunArgs),
    /// Evaluate the saved artifacts of each seed.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Episodes per seed; defaults to the config's final evaluation count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Rerun the pipeline for each decay value.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9, 1.0])]
        eta: Vec<f64>,
    },
    /// Tabulate calibrated margins against violation rates across runs.
    Report {
        /// Run directories containing a summary.json.
        #[arg(long = "runs", num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; defaults for `--env` are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Run a single seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_parser = parse_nominal)]
    nominal: Option<NominalKind>,
    #[arg(long)]
    no_filter: bool,
}

fn parse_nominal(s: &str) -> Result<NominalKind, String> {
    s.parse().map_err(|e: kcbf_core::experiments::ExperimentError| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.env) {
            (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(env)) => RunConfig::for_env(env)?,
            (None, None) => bail!("either --config or --env is required"),
        };
        if let (Some(env), Some(_)) = (&self.env, &self.config) {
            if *env != cfg.env {
                bail!("--env {env} disagrees with the config's env {}", cfg.env);
            }
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(kind) = self.nominal {
            cfg.nominal = kind;
        }
        if self.no_filter {
            cfg.filter = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let root = out.join(cfg.run_id());
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join("config.toml"), cfg.to_toml())?;
    Ok(root)
}

fn transitions(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<TransitionSet> {
    let path = dir.join("transitions.json");
    if path.exists() {
        let set = TransitionSet::load(&path)?;
        if set.config_hash == cfg.hash() && set.seed == seed {
            return Ok(set);
        }
        log::warn!("{} belongs to another config; collecting again", path.display());
    }
    let set = collect(cfg, seed)?;
    set.save(&path)?;
    Ok(set)
}

fn model(cfg: &RunConfig, seed: u64, dir: &Path, data: &TransitionSet) -> Result<KoopmanModel> {
    let path = dir.join("model.json");
    if path.exists() {
        return Ok(KoopmanModel::load(&path)?);
    }
    let model = fit_from(cfg, seed, &data.transitions)?;
    model.save(&path)?;
    Ok(model)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Collect(args) => {
            let cfg = args.resolve()?;
            write_config(&cfg, &args.out)?;
            for &seed in &cfg.seeds {
                let dir = seed_dir(&args.out, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                let set = collect(&cfg, seed)?;
                set.save(&dir.join("transitions.json"))?;
                println!("seed {seed}: {} transitions -> {}", set.transitions.len(), dir.display());
            }
        }
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            write_config(&cfg, &args.out)?;
            for &seed in &cfg.seeds {
                let dir = seed_dir(&args.out, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                let data = transitions(&cfg, seed, &dir)?;
                let model = fit_from(&cfg, seed, &data.transitions)?;
                model.save(&dir.join("model.json"))?;
                println!(
                    "seed {seed}: lifted dim {}, one-step mse {:.3e} -> {}",
                    model.lifted_dim(),
                    model.fit_mse1,
                    dir.join("model.json").display()
                );
            }
        }
        Command::Calibrate(args) => {
            let cfg = args.resolve()?;
            write_config(&cfg, &args.out)?;
            for &seed in &cfg.seeds {
                let dir = seed_dir(&args.out, &cfg, seed);
                std::fs::create_dir_all(&dir)?;
                let data = transitions(&cfg, seed, &dir)?;
                let model = model(&cfg, seed, &dir, &data)?;
                let prepared = calibrate_from(&cfg, seed, &data.transitions, model)?;
                prepared.calibration.save(&dir.join("calibration.json"))?;
                for b in &prepared.barriers {
                    println!("seed {seed}: {} rho {}", b.label, b.rho.value());
                }
            }
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let root = run_pipeline(&cfg, &args.out)?;
            let summary = RunSummary::load(&root.join("summary.json"))?;
            println!("{}", root.display());
            if let Some(a) = summary.aggregate {
                println!(
                    "return {:.2} ± {:.2}, violation {:.4}, intervention {:.4}, slack {:.4}, min h {:.4}",
                    a.episode_return.mean,
                    a.episode_return.std,
                    a.violation_rate.mean,
                    a.intervention_rate.mean,
                    a.slack_rate.mean,
                    a.min_h.mean
                );
            }
        }
        Command::Eval { run, episodes } => {
            let cfg = run.resolve()?;
            for &seed in &cfg.seeds {
                let dir = seed_dir(&run.out, &cfg, seed);
                let s = evaluate_saved(&cfg, seed, &dir, episodes.unwrap_or(cfg.final_eval_episodes))
                    .with_context(|| format!("evaluating {}", dir.display()))?;
                println!(
                    "seed {seed}: {} episodes, return {:.2}, violation {:.4}, intervention {:.4}, min h {:.4}",
                    s.episodes, s.return_mean, s.violation_rate, s.intervention_rate, s.min_h
                );
            }
        }
        Command::Ablate { run, eta } => {
            let cfg = run.resolve()?;
            let rows = ablation_eta(&cfg, &eta, &run.out)?;
            for r in &rows {
                println!(
                    "eta {}: violation {:.4}, intervention {:.4}, slack {:.4}",
                    r.eta, r.violation_rate, r.intervention_rate, r.slack_rate
                );
            }
            println!("tighter decay raises slack or intervention: {}", tighter_eta_raises_slack_or_intervention(&rows));
        }
        Command::Report { runs, out } => {
            std::fs::create_dir_all(&out)?;
            let path = out.join("rho_effect.csv");
            let report = rho_effect_report(&runs, &path)?;
            for r in &report.rows {
                println!("{} {}: rho {:.3e}, violation {:.4}", r.env, r.barrier, r.rho, r.violation_rate);
            }
            match &report.rank_test {
                RankTest::Passed => println!("rank test passed"),
                RankTest::Failed(why) => println!("rank test failed: {why}"),
                RankTest::Skipped(why) => println!("rank test skipped: {why}"),
            }
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse().command)
}
