//! End-to-end tests of the `rvd` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvd_core::policy::{self, MlpParams};
use serde_json::Value;

fn rvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvd"))
        .args(args)
        .env("RVD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small, fast training configuration.
const SMALL: &str = r#"{"ppo": {"hidden": 16, "n_envs": 2, "rollout_horizon": 128, "minibatch_size": 64,
    "epochs_per_update": 2, "total_steps": 768, "checkpoint_every": 1}}"#;

#[test]
fn train_missing_config_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = rvd(&["train", p(&missing), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(p(&missing)), "{}", stderr(&o));
}

#[test]
fn train_rejects_unknown_config_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), r#"{"ppo": {"gama": 0.9}}"#);
    let o = rvd(&["train", p(&cfg), "--out", p(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_manifest_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SMALL);
    let out = dir.path().join("run");
    let o = rvd(&["train", p(&cfg), "--seed", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config"]["ppo"]["hidden"], 16);
    for u in 1..=3 {
        assert!(out.join(format!("checkpoints/update_{u:06}.json")).exists());
        assert!(out.join(format!("checkpoints/update_{u:06}.json.state.json")).exists());
    }
    let w = policy::load(out.join("final.json")).unwrap();
    assert_eq!(w.hidden(), 16);
}

#[test]
fn resumed_training_log_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SMALL);
    let full = dir.path().join("full");
    assert!(rvd(&["train", p(&cfg), "--seed", "9", "--out", p(&full)]).status.success());

    let part = dir.path().join("part");
    let o = rvd(&["train", p(&cfg), "--seed", "9", "--out", p(&part), "--total-steps", "256"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = part.join("checkpoints/update_000001.json");
    let o = rvd(&["train", "--resume", p(&ckpt), "--out", p(&part), "--total-steps", "768"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let a = std::fs::read(full.join("metrics.jsonl")).unwrap();
    let b = std::fs::read(part.join("metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(full.join("final.json")).unwrap(),
        std::fs::read(part.join("final.json")).unwrap()
    );
}

fn save_weights(dir: &Path, name: &str, params: &MlpParams) -> PathBuf {
    let path = dir.join(name);
    policy::save(params, &path).unwrap();
    path
}

#[test]
fn eval_corrupted_weights_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(&dir.path().join("w.json"), "{\"format\": \"rvd-mlp-v1\", \"tensors\": ");
    let o = rvd(&["eval", p(&w), "--n", "2", "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(3));
    let direct = policy::load(&w).unwrap_err().to_string();
    assert!(stderr(&o).contains(&direct), "{} vs {direct}", stderr(&o));
}

#[test]
fn eval_sweep_writes_three_stats_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(16));
    let out = dir.path().join("e");
    let o = rvd(&["eval", p(&w), "--n", "10", "--alpha", "sweep", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    for a in ["0", "0.05", "0.1"] {
        let s = rvd_core::eval::read_stats(&out.join(format!("stats_alpha_{a}.json"))).unwrap();
        assert_eq!(s.n_episodes, 10);
        assert_eq!(s.success_rate, Some(0.0));
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn eval_rejects_bad_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(8));
    let o = rvd(&["eval", p(&w), "--alpha", "lots", "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_zero_policy_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(16));
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"env": {"pos_dispersion": 0.0, "vel_dispersion": 0.0}}"#,
    );
    let csv = dir.path().join("t.csv");
    let o = rvd(&["simulate", p(&w), "--config", p(&cfg), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = rvd_core::eval::read_trajectory(&csv).unwrap();
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows.last().unwrap().t, 1000.0);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(summary["outcome"], "Timeout");
    assert!(dir.path().join("t.csv.manifest.json").exists());
}

#[test]
fn simulate_instant_failure_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(8));
    // A hair-thin cone that the dispersed start state lies outside of.
    let cfg = write(&dir.path().join("c.json"), r#"{"env": {"cone_half_angle": 0.001}}"#);
    let csv = dir.path().join("t.csv");
    let o = rvd(&["simulate", p(&w), "--config", p(&cfg), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        format!("{}\n", rvd_core::eval::TRAJECTORY_HEADER)
    );
}

#[test]
fn simulate_replays_campaign_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rvd_core::seed::rng_from_seed(5);
    let w = save_weights(dir.path(), "w.json", &MlpParams::init(16, &mut rng));
    let out = dir.path().join("e");
    assert!(rvd(&["eval", p(&w), "--n", "6", "--alpha", "0.05", "--seed", "77", "--out", p(&out)])
        .status
        .success());
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(out.join("stats_alpha_0.05.json")).unwrap()).unwrap();
    let cfg = write(&dir.path().join("c.json"), r#"{"env": {"alpha": 0.05}}"#);
    for i in [0usize, 4] {
        let csv = dir.path().join(format!("ep{i}.csv"));
        let o = rvd(&[
            "simulate",
            p(&w),
            "--config",
            p(&cfg),
            "--seed",
            "77",
            "--episode",
            &i.to_string(),
            "--out",
            p(&csv),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let sim: Value = serde_json::from_str(&std::fs::read_to_string(csv.with_extension("json")).unwrap()).unwrap();
        assert_eq!(sim["terminal_state"], stats["episodes"][i]["terminal_state"]);
        assert_eq!(sim["outcome"], stats["episodes"][i]["outcome"]);
    }
}

#[test]
fn bench_enforces_minimum_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(8));
    let o = rvd(&["bench", p(&w), "--iters", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_json_reports_precision() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(32));
    let o = rvd(&["bench", p(&w), "--iters", "1000", "--json", "--out", p(&dir.path().join("b"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 2);
    assert_eq!(arr[0]["precision"], "64");
    assert_eq!(arr[1]["precision"], "32");
    assert!(arr.iter().all(|r| r["mean_us"].as_f64().unwrap() > 0.0));
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/bench.json")).unwrap()).unwrap();
    assert_eq!(file, v);
}

#[test]
fn bench_text_output_names_precision() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(8));
    let o = rvd(&["bench", p(&w), "--iters", "1000", "--precision", "32"]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("32-bit"));
}

#[test]
fn invalid_thread_count_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = save_weights(dir.path(), "w.json", &MlpParams::zeros(8));
    let o = Command::new(env!("CARGO_BIN_EXE_rvd"))
        .args(["bench", p(&w)])
        .env("RVD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
