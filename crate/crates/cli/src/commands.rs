//! Subcommand implementations.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;

use rvd_core::env::EnvConfig;
use rvd_core::eval::{self, EpisodeRecord, LatencyStats, Precision};
use rvd_core::policy::{self, MlpParams};
use rvd_core::trainer::{CurriculumSchedule, PpoConfig, Trainer, TrainError};

use crate::config::{create_dir, write_file, Failure, RunConfig, RunManifest};

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    env: &'a EnvConfig,
    ppo: &'a PpoConfig,
    curriculum: &'a CurriculumSchedule,
    resumed_from: Option<&'a Path>,
    resumed_at_update: u64,
}

fn checkpoint_path(dir: &Path, update: u64) -> PathBuf {
    dir.join(format!("update_{update:06}.json"))
}

/// Keeps the metrics lines up to and including `update` from an earlier log.
fn truncated_log(path: &Path, update: u64) -> Result<String, Failure> {
    let Ok(file) = File::open(path) else {
        return Ok(String::new());
    };
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Failure::data(format!("malformed metrics line in {}: {e}", path.display())))?;
        if v["update"].as_u64().is_some_and(|u| u <= update) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

pub fn train(
    config: Option<&Path>,
    seed: u64,
    out: &Path,
    total_steps: Option<u64>,
    resume: Option<&Path>,
) -> Result<(), Failure> {
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(ckpt)?,
        None => {
            let config = config.ok_or_else(|| Failure::usage("a config file is required unless --resume is given"))?;
            let cfg = RunConfig::load(config)?;
            let ppo = PpoConfig {
                total_steps: total_steps.unwrap_or(cfg.ppo.total_steps),
                ..cfg.ppo.clone()
            };
            Trainer::new(ppo, cfg.env.clone(), cfg.curriculum(), seed)?
        }
    };
    if let (Some(_), Some(t)) = (resume, total_steps) {
        trainer.set_total_steps(t)?;
    }

    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let metrics_path = out.join("metrics.jsonl");
    let final_path = out.join("final.json");
    RunManifest::new(
        "train",
        trainer.seed(),
        TrainSnapshot {
            env: trainer.env_config(),
            ppo: trainer.ppo_config(),
            curriculum: trainer.curriculum(),
            resumed_from: resume,
            resumed_at_update: trainer.updates_done(),
        },
    )
    .output("metrics", &metrics_path)
    .output("checkpoints", &ckpt_dir)
    .output("final_weights", &final_path)
    .write(&out.join("manifest.json"))?;

    let previous = if resume.is_some() {
        truncated_log(&metrics_path, trainer.updates_done())?
    } else {
        String::new()
    };
    write_file(&metrics_path, &previous)?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", metrics_path.display())))?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        // A second handler cannot be installed in the same process; that
        // only matters to embedders, so the error is ignored.
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }

    let every = trainer.ppo_config().checkpoint_every;
    let total = trainer.ppo_config().num_updates();
    let mut last_saved = None;
    trainer.train(&stop, |t, m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|source| TrainError::Io {
                path: metrics_path.display().to_string(),
                source,
            })?;
        eprintln!(
            "update {}/{} steps {} stage {} episodes {} success {} window {}",
            m.update,
            total,
            m.env_steps,
            m.stage,
            m.episodes,
            m.success_rate.map_or("-".into(), |r| format!("{:.2}", r)),
            m.window_success_rate.map_or("-".into(), |r| format!("{:.2}", r)),
        );
        if every > 0 && m.update % every == 0 {
            t.save_checkpoint(&checkpoint_path(&ckpt_dir, m.update))?;
            last_saved = Some(m.update);
        }
        Ok(())
    })?;

    let done = trainer.updates_done();
    if last_saved != Some(done) {
        trainer.save_checkpoint(&checkpoint_path(&ckpt_dir, done))?;
    }
    if trainer.is_finished() {
        trainer.save_checkpoint(&final_path)?;
        eprintln!("finished after {done} updates; weights in {}", final_path.display());
    } else {
        eprintln!(
            "interrupted after {done} updates; resume with --resume {}",
            checkpoint_path(&ckpt_dir, done).display()
        );
    }
    Ok(())
}

fn load_weights(path: &Path) -> Result<MlpParams, Failure> {
    Ok(policy::load(path)?)
}

fn parse_alphas(alpha: Option<&str>, default: f64) -> Result<Vec<f64>, Failure> {
    match alpha {
        None => Ok(vec![default]),
        Some("sweep") => Ok(vec![0.0, 0.05, 0.1]),
        Some(s) => s
            .parse::<f64>()
            .ok()
            .filter(|a| a.is_finite() && *a >= 0.0)
            .map(|a| vec![a])
            .ok_or_else(|| Failure::usage(format!("--alpha must be a non-negative number or `sweep`, got {s:?}"))),
    }
}

pub fn stats_file_name(alpha: f64) -> String {
    format!("stats_alpha_{alpha}.json")
}

pub fn eval(
    weights: &Path,
    config: Option<&Path>,
    n: usize,
    alpha: Option<&str>,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let params = load_weights(weights)?;
    let cfg = RunConfig::load_or_default(config)?;
    let alphas = parse_alphas(alpha, cfg.env.alpha)?;
    create_dir(out)?;

    #[derive(Serialize)]
    struct EvalSnapshot<'a> {
        weights: &'a Path,
        env: &'a EnvConfig,
        n: usize,
        alphas: &'a [f64],
    }
    let mut manifest = RunManifest::new(
        "eval",
        seed,
        EvalSnapshot {
            weights,
            env: &cfg.env,
            n,
            alphas: &alphas,
        },
    );
    for a in &alphas {
        manifest = manifest.output(&format!("stats_alpha_{a}"), &out.join(stats_file_name(*a)));
    }
    manifest.write(&out.join("manifest.json"))?;

    println!("{:>6} | {:>7} | {:>17} | {:>13}", "alpha", "Success", "Δm [g]", "Δt [s]");
    for a in alphas {
        let env = EnvConfig { alpha: a, ..cfg.env.clone() };
        let stats = eval::run_campaign(&params, &env, n, seed)?;
        eval::write_stats(&stats, &out.join(stats_file_name(a)))?;
        println!("{a:>6} | {}", stats.table_row());
        if stats.verification_mismatches > 0 {
            eprintln!(
                "warning: {} episodes disagree with the independent docking check",
                stats.verification_mismatches
            );
        }
    }
    Ok(())
}

pub fn simulate(weights: &Path, config: Option<&Path>, seed: u64, episode: u64, out: &Path) -> Result<(), Failure> {
    let params = load_weights(weights)?;
    let cfg = RunConfig::load_or_default(config)?;
    let summary_path = out.with_extension("json");
    let manifest_path = PathBuf::from(format!("{}.manifest.json", out.display()));

    #[derive(Serialize)]
    struct SimSnapshot<'a> {
        weights: &'a Path,
        env: &'a EnvConfig,
        episode: u64,
        episode_seed: u64,
    }
    let episode_seed = eval::episode_seed(seed, episode);
    RunManifest::new(
        "simulate",
        seed,
        SimSnapshot {
            weights,
            env: &cfg.env,
            episode,
            episode_seed,
        },
    )
    .output("trajectory", out)
    .output("summary", &summary_path)
    .write(&manifest_path)?;

    let (rec, traj) = eval::run_episode(&params, &cfg.env, episode_seed, true)?;
    let rec = EpisodeRecord { index: episode, ..rec };
    eval::write_trajectory(&traj, out)?;
    write_file(&summary_path, &(serde_json::to_string_pretty(&rec).expect("record serializes") + "\n"))?;
    let s = rec.terminal_state;
    println!(
        "{:?} after {} s, propellant {:.3} g, terminal pos ({:.4}, {:.4}, {:.4}) m vel ({:.5}, {:.5}, {:.5}) m/s",
        rec.outcome,
        rec.elapsed,
        rec.propellant_used * 1e3,
        s.pos.x,
        s.pos.y,
        s.pos.z,
        s.vel.x,
        s.vel.y,
        s.vel.z
    );
    Ok(())
}

pub fn bench(weights: &Path, iters: usize, precision: &str, json: bool, out: Option<&Path>) -> Result<(), Failure> {
    let precisions = match precision {
        "both" => vec![Precision::F64, Precision::F32],
        p => vec![p
            .parse()
            .ok()
            .and_then(Precision::from_bits)
            .ok_or_else(|| Failure::usage(format!("--precision must be 64, 32 or both, got {p:?}")))?],
    };
    if iters < eval::MIN_BENCH_ITERATIONS {
        return Err(Failure::usage(format!(
            "--iters must be at least {}, got {iters}",
            eval::MIN_BENCH_ITERATIONS
        )));
    }
    let params = load_weights(weights)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        #[derive(Serialize)]
        struct BenchSnapshot<'a> {
            weights: &'a Path,
            iters: usize,
            precisions: &'a [Precision],
        }
        RunManifest::new(
            "bench",
            0,
            BenchSnapshot {
                weights,
                iters,
                precisions: &precisions,
            },
        )
        .output("results", &dir.join("bench.json"))
        .write(&dir.join("manifest.json"))?;
    }
    let results = precisions
        .into_iter()
        .map(|p| eval::latency_bench(&params, iters, p))
        .collect::<Result<Vec<LatencyStats>, _>>()?;
    let text = serde_json::to_string_pretty(&results).expect("stats serialize");
    if json {
        println!("{text}");
    } else {
        for r in &results {
            println!(
                "precision {}-bit: {:.3} ± {:.3} µs over {} iterations",
                r.precision.bits(),
                r.mean_us,
                r.std_us,
                r.iterations
            );
        }
    }
    if let Some(dir) = out {
        write_file(&dir.join("bench.json"), &(text + "\n"))?;
    }
    Ok(())
}
