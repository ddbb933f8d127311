//! Monte Carlo validation campaigns, independent docking re-verification,
//! trajectory and statistics files, and the inference-latency benchmark.
//!
//! Campaign episode `i` runs in an environment seeded with
//! `derive_stream_seed(root, EPISODE, i)`, so any episode can be replayed on
//! its own with [`run_episode`]. The policy acts with its mean action.

mod bench;
mod io;

pub use bench::{latency_bench, LatencyStats, Precision, MIN_BENCH_ITERATIONS};
pub use io::{read_stats, read_trajectory, write_stats, write_trajectory, TRAJECTORY_HEADER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{RelativeState, G0};
use crate::env::{check_termination, Action, DockTolerances, DockingEnv, EnvConfig, EnvError, OutcomeCounts, OutcomeKind};
use crate::policy::{MlpParams, PolicyError};
use crate::seed::{derive_stream_seed, stream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("episode {index} failed: {source}")]
    Episode {
        index: u64,
        #[source]
        source: EnvError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

/// One checked docking requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub value: f64,
    pub limit: f64,
    /// Distance to the limit on the passing side; negative when violated.
    pub margin: f64,
    pub pass: bool,
}

impl Requirement {
    /// `value < limit`.
    fn below(value: f64, limit: f64) -> Self {
        Self {
            value,
            limit,
            margin: limit - value,
            pass: value < limit,
        }
    }
}

/// Per-requirement result of [`verify_docking`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DockingReport {
    pub docked: bool,
    /// `sqrt(x² + z²)` against the lateral alignment limit.
    pub lateral_alignment: Requirement,
    /// `|vy|` against the approach velocity limit.
    pub approach_velocity: Requirement,
    /// `sqrt(vx² + vz²)` against the normal velocity limit.
    pub normal_velocity: Requirement,
    /// `y` against the docking plane; passes when `y ≥ -margin`.
    pub plane_crossing: Requirement,
}

/// Re-checks the docking requirements on a terminal state. Written apart
/// from the environment's termination test so each can audit the other.
pub fn verify_docking(terminal: &RelativeState, tol: &DockTolerances) -> DockingReport {
    let p = terminal.pos;
    let v = terminal.vel;
    let lateral_alignment = Requirement::below((p.x * p.x + p.z * p.z).sqrt(), tol.lateral_align);
    let approach_velocity = Requirement::below(v.y.abs(), tol.approach_vel);
    let normal_velocity = Requirement::below((v.x * v.x + v.z * v.z).sqrt(), tol.normal_vel);
    let plane_limit = -tol.dock_plane_margin;
    let plane_crossing = Requirement {
        value: p.y,
        limit: plane_limit,
        margin: p.y - plane_limit,
        pass: p.y >= plane_limit,
    };
    DockingReport {
        docked: lateral_alignment.pass && approach_velocity.pass && normal_velocity.pass && plane_crossing.pass,
        lateral_alignment,
        approach_velocity,
        normal_velocity,
        plane_crossing,
    }
}

/// One row of a trajectory file: the state after step `t`, what the policy
/// observed there, and the forces and reward of the step that led to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub mass: f64,
    pub ox: f64,
    pub oy: f64,
    pub oz: f64,
    pub ovx: f64,
    pub ovy: f64,
    pub ovz: f64,
    pub omass: f64,
    pub fcx: f64,
    pub fcy: f64,
    pub fcz: f64,
    pub fax: f64,
    pub fay: f64,
    pub faz: f64,
    pub reward: f64,
}

/// Summary of one campaign episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    pub seed: u64,
    pub outcome: OutcomeKind,
    /// Episode duration [s].
    pub elapsed: f64,
    /// Propellant used [kg].
    pub propellant_used: f64,
    pub episode_return: f64,
    pub terminal_state: RelativeState,
    /// Outcome of [`verify_docking`] against the episode's tolerances.
    pub verified_docked: bool,
}

/// Mean with population standard deviation and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self {
            mean,
            std,
            sem: std / n.sqrt(),
        })
    }
}

/// Validation statistics in the layout of the paper's results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub n_episodes: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Percentage of docked episodes; `None` for an empty campaign.
    pub success_rate: Option<f64>,
    /// Propellant per episode [g], over all episodes.
    pub delta_m: Option<Summary>,
    /// Episode duration [s], over all episodes.
    pub delta_t: Option<Summary>,
    pub outcomes: OutcomeCounts,
    /// Episodes where the environment's outcome and [`verify_docking`]
    /// disagree about docking. Zero unless one of them is wrong.
    pub verification_mismatches: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl CampaignStats {
    pub fn from_episodes(episodes: Vec<EpisodeRecord>, seed: u64, alpha: f64) -> Self {
        let n = episodes.len();
        let mut outcomes = OutcomeCounts::default();
        episodes.iter().for_each(|e| outcomes.add(e.outcome));
        let dm: Vec<f64> = episodes.iter().map(|e| e.propellant_used * 1e3).collect();
        let dt: Vec<f64> = episodes.iter().map(|e| e.elapsed).collect();
        let verification_mismatches = episodes
            .iter()
            .filter(|e| (e.outcome == OutcomeKind::DockSuccess) != e.verified_docked)
            .count();
        Self {
            n_episodes: n,
            seed,
            alpha,
            success_rate: (n > 0).then(|| 100.0 * outcomes.dock_success as f64 / n as f64),
            delta_m: Summary::of(&dm),
            delta_t: Summary::of(&dt),
            outcomes,
            verification_mismatches,
            episodes,
        }
    }

    /// One table row: `Success % | Δm g | Δt s`, with population std.
    pub fn table_row(&self) -> String {
        let pm = |s: Option<Summary>, digits: usize| match s {
            Some(s) => format!("{:.d$}±{:.d$}", s.mean, s.std, d = digits),
            None => "n/a".to_string(),
        };
        let success = self.success_rate.map_or("n/a".to_string(), |r| format!("{r:.1}"));
        format!("{:>7} | {:>17} | {:>13}", success, pm(self.delta_m, 3), pm(self.delta_t, 1))
    }
}

/// Seed of campaign episode `index` under `root`.
pub fn episode_seed(root: u64, index: u64) -> u64 {
    derive_stream_seed(root, stream::EPISODE, index)
}

/// Runs one episode with the mean action from an environment seeded with
/// `seed`. Records the trajectory when `record` is set. A start state that
/// already meets a termination condition ends the episode with no steps.
pub fn run_episode(
    params: &MlpParams,
    env_cfg: &EnvConfig,
    seed: u64,
    record: bool,
) -> Result<(EpisodeRecord, Vec<TrajectoryRecord>), EnvError> {
    let mut env = DockingEnv::new(EnvConfig {
        rng_seed: seed,
        ..env_cfg.clone()
    })?;
    let mut obs = *env.last_observation();
    let mut trajectory = Vec::new();
    let mut ret = 0.0;
    let initial = *env.state();
    if let Some(kind) = check_termination(&initial, env_cfg, 0) {
        // The start state already ends the episode; nothing is flown.
        let rec = EpisodeRecord {
            index: 0,
            seed,
            outcome: kind,
            elapsed: 0.0,
            propellant_used: 0.0,
            episode_return: 0.0,
            terminal_state: initial,
            verified_docked: verify_docking(&initial, &env_cfg.tolerances).docked,
        };
        return Ok((rec, trajectory));
    }
    loop {
        let a = params.forward(&obs).action_mean;
        let step = env.step(&Action(a))?;
        ret += step.reward;
        obs = step.obs;
        if record {
            let i = &step.info;
            trajectory.push(TrajectoryRecord {
                t: i.t,
                x: i.state.pos.x,
                y: i.state.pos.y,
                z: i.state.pos.z,
                vx: i.state.vel.x,
                vy: i.state.vel.y,
                vz: i.state.vel.z,
                mass: i.state.mass,
                ox: i.observed.pos.x,
                oy: i.observed.pos.y,
                oz: i.observed.pos.z,
                ovx: i.observed.vel.x,
                ovy: i.observed.vel.y,
                ovz: i.observed.vel.z,
                omass: i.observed.mass,
                fcx: i.commanded_force.0.x,
                fcy: i.commanded_force.0.y,
                fcz: i.commanded_force.0.z,
                fax: i.applied_force.0.x,
                fay: i.applied_force.0.y,
                faz: i.applied_force.0.z,
                reward: step.reward,
            });
        }
        if let Some(o) = step.outcome {
            let rec = EpisodeRecord {
                index: 0,
                seed,
                outcome: o.kind,
                elapsed: o.elapsed,
                propellant_used: o.propellant_used,
                episode_return: ret,
                terminal_state: o.terminal_state,
                verified_docked: verify_docking(&o.terminal_state, &env_cfg.tolerances).docked,
            };
            return Ok((rec, trajectory));
        }
    }
}

/// Runs `n` independent episodes in parallel and aggregates them. The
/// result does not depend on the number of worker threads.
pub fn run_campaign(params: &MlpParams, env_cfg: &EnvConfig, n: usize, seed: u64) -> Result<CampaignStats, EvalError> {
    params.validate()?;
    env_cfg.validate()?;
    let episodes = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            run_episode(params, env_cfg, episode_seed(seed, index), false)
                .map(|(rec, _)| EpisodeRecord { index, ..rec })
                .map_err(|source| EvalError::Episode { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CampaignStats::from_episodes(episodes, seed, env_cfg.alpha))
}

/// Propellant implied by the applied forces of a trajectory [kg].
pub fn propellant_from_trajectory(records: &[TrajectoryRecord], env_cfg: &EnvConfig) -> f64 {
    records
        .iter()
        .map(|r| (r.fax * r.fax + r.fay * r.fay + r.faz * r.faz).sqrt() * env_cfg.control_dt / (env_cfg.isp * G0))
        .sum()
}
