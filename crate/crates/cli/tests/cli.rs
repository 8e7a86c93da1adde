use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kcbf_core::experiments::{seed_dir, RunConfig};

fn kcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcbf")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kcbf(args);
    assert!(out.status.success(), "kcbf {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small(env: &str) -> RunConfig {
    let mut c = RunConfig::for_env(env).unwrap();
    c.num_rbf = 8;
    c.collect_steps = 2_000;
    c.calibration_size = 300;
    c.seeds = vec![0];
    c.budget = 300;
    c.eval_every = 300;
    c.eval_episodes = 1;
    c.final_eval_episodes = 2;
    c
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(format!("{}.toml", cfg.run_id()));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `collect`, `fit` and `calibrate` run in sequence reproduce what a
/// zero-budget `train` writes in one go.
#[test]
fn staged_commands_match_the_one_shot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("cartpole");
    let path = write_config(tmp.path(), &cfg);
    let staged = tmp.path().join("staged");
    for cmd in ["collect", "fit", "calibrate"] {
        ok(&[cmd, "--config", s(&path), "--out", s(&staged)]);
    }
    let dir = seed_dir(&staged, &cfg, 0);
    for f in ["transitions.json", "model.json", "calibration.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }

    let mut zero = cfg.clone();
    zero.budget = 0;
    let zpath = write_config(tmp.path(), &zero);
    let oneshot = tmp.path().join("oneshot");
    ok(&["train", "--config", s(&zpath), "--out", s(&oneshot)]);
    let odir = seed_dir(&oneshot, &zero, 0);
    // the budget plays no part in fitting or calibration
    for f in ["model.json", "calibration.json"] {
        assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(odir.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn train_then_eval_reuses_saved_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("cartpole");
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("runs");
    let printed = ok(&["train", "--config", s(&path), "--out", s(&out)]);
    assert!(printed.contains("violation"), "{printed}");
    let eval = ok(&["eval", "--config", s(&path), "--out", s(&out), "--episodes", "3"]);
    assert!(eval.contains("seed 0: 3 episodes"), "{eval}");
    assert!(seed_dir(&out, &cfg, 0).join("eval.json").exists());
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("cartpole");
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("runs");
    ok(&["train", "--config", s(&path), "--out", s(&out), "--no-filter", "--seed", "4"]);
    let mut expect = cfg.clone();
    expect.filter = false;
    expect.seeds = vec![4];
    let root = out.join(expect.run_id());
    assert_eq!(RunConfig::load(&root.join("config.toml")).unwrap(), expect);
    assert!(root.join("seed-4").join("summary.json").exists());
}

#[test]
fn bad_invocations_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    for args in [
        vec!["train", "--out", s(&out)],
        vec!["train", "--env", "pendulum", "--out", s(&out)],
        vec!["train", "--env", "cartpole", "--nominal", "mpc", "--out", s(&out)],
        vec!["eval", "--env", "cartpole", "--out", s(&out)],
        vec!["report", "--runs", s(&out)],
    ] {
        let o = kcbf(&args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(!o.stderr.is_empty());
    }
    let cfg = small("cartpole");
    let path = write_config(tmp.path(), &cfg);
    let o = kcbf(&["train", "--config", s(&path), "--env", "quadrotor", "--out", s(&out)]);
    assert!(!o.status.success());
}

#[test]
fn ablate_and_report_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let contact = small("synthetic_contact");
    let cpath = write_config(tmp.path(), &contact);
    let printed = ok(&["ablate", "--config", s(&cpath), "--out", s(&out), "--eta", "0.5,1.0"]);
    assert!(printed.contains("eta 0.5") && printed.contains("eta 1"), "{printed}");
    let table = std::fs::read_to_string(out.join("ablation_eta.csv")).unwrap();
    assert!(table.starts_with("# schema=ablation_eta version=1"));
    assert_eq!(table.lines().count(), 4);

    let cart = small("cartpole");
    let kpath = write_config(tmp.path(), &cart);
    ok(&["train", "--config", s(&kpath), "--out", s(&out)]);
    let mut contact_run = contact.clone();
    contact_run.eta = vec![1.0];
    let runs = [out.join(cart.run_id()), out.join(contact_run.run_id())];
    let report = ok(&["report", "--runs", s(&runs[0]), s(&runs[1]), "--out", s(&out)]);
    assert!(report.contains("rank test passed"), "{report}");
    let csv = std::fs::read_to_string(out.join("rho_effect.csv")).unwrap();
    assert!(csv.starts_with("# schema=rho_effect version=1"));
    assert_eq!(csv.lines().count(), 4);
}
