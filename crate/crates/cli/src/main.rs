//! `rvd`: train, evaluate, simulate and benchmark the docking controller.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or weights
//! error, 4 numerical failure during a run. `RVD_THREADS` caps the number of
//! worker threads.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Failure, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "rvd", version, about = "Neural rendezvous-and-docking controller laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a controller with PPO and the curriculum.
    Train {
        /// Run configuration (JSON with optional `env`, `ppo`, `curriculum`).
        #[arg(required_unless_present = "resume")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for manifest, metrics log and checkpoints.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Overrides `ppo.total_steps`.
        #[arg(long)]
        total_steps: Option<u64>,
        /// Continue from a checkpoint weight file (its `.state.json` sidecar
        /// must sit next to it). Configuration and seed come from the sidecar.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a Monte Carlo validation campaign.
    Eval {
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Navigation noise level, or `sweep` for 0, 0.05 and 0.1.
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
    },
    /// Fly one episode and write its trajectory.
    Simulate {
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Campaign root seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Campaign episode index; with `--seed` this replays that episode.
        #[arg(long, default_value_t = 0)]
        episode: u64,
        /// Trajectory CSV; a `.json` summary and manifest are written next to it.
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Measure single-observation inference latency.
    Bench {
        weights: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        iters: usize,
        /// 64, 32 or `both`.
        #[arg(long, default_value = "both")]
        precision: String,
        /// Print machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
        /// Directory for a manifest and the JSON result.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("RVD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::usage(format!("RVD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            total_steps,
            resume,
        } => commands::train(config.as_deref(), seed, &out, total_steps, resume.as_deref()),
        Command::Eval {
            weights,
            config,
            n,
            alpha,
            seed,
            out,
        } => commands::eval(&weights, config.as_deref(), n, alpha.as_deref(), seed, &out),
        Command::Simulate {
            weights,
            config,
            seed,
            episode,
            out,
        } => commands::simulate(&weights, config.as_deref(), seed, episode, &out),
        Command::Bench {
            weights,
            iters,
            precision,
            json,
            out,
        } => commands::bench(&weights, iters, &precision, json, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
