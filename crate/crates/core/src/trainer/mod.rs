//! PPO training: rollout collection, GAE, clipped-surrogate updates with
//! Adam, a success-gated curriculum, metrics logging and checkpoints.
//!
//! A run is fully determined by its configurations and root seed. Worker
//! `i` seeds its environment from `derive_stream_seed(seed, ENV, i)` and its
//! action sampler from `derive_stream_seed(seed, ACTION, i)`; the network
//! initialisation and minibatch shuffling have their own streams. Resuming
//! from a checkpoint restores every stream, so a resumed run logs the same
//! metrics as an uninterrupted one.

mod adam;
mod config;
mod gae;
mod ppo;
mod rollout;

pub use adam::{adam_step, AdamState};
pub use config::{CurriculumSchedule, CurriculumStage, PpoConfig};
pub use gae::{gae, normalize};
pub use ppo::{clip_grad_norm, minibatch_loss, ppo_update, prepared_advantages, MinibatchLoss, UpdateDiagnostics};
pub use rollout::{collect_rollouts, CompletedEpisode, RolloutBuffer, Worker, WorkerSnapshot};

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{DockingEnv, EnvConfig, EnvError, OutcomeCounts, OutcomeKind};
use crate::policy::{self, MlpParams, PolicyError};
use crate::seed::{derive_stream_seed, rng_from_seed, stream, Rng};

pub const STATE_FORMAT_TAG: &str = "rvd-trainer-state-v1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("environment {env_index} failed at step {step}: {source}")]
    Env {
        env_index: usize,
        step: u32,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("non-finite loss in epoch {epoch}, minibatch {minibatch}")]
    NonFinite {
        epoch: usize,
        minibatch: usize,
        /// Buffer rows of the offending minibatch.
        indices: Vec<usize>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trainer state: {0}")]
    State(String),
}

/// Everything logged for one update. Contains no wall-clock quantities, so
/// logs of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub update: u64,
    pub env_steps: u64,
    /// Curriculum stage the rollout was collected in.
    pub stage: usize,
    pub episodes: usize,
    /// Mean undiscounted return of episodes finished in this rollout.
    pub mean_return: Option<f64>,
    /// Success fraction of episodes finished in this rollout.
    pub success_rate: Option<f64>,
    /// Success fraction over the trailing curriculum window.
    pub window_success_rate: Option<f64>,
    /// Mean propellant used per finished episode, kg.
    pub mean_delta_m: Option<f64>,
    /// Mean duration of finished episodes, s.
    pub mean_delta_t: Option<f64>,
    pub outcomes: OutcomeCounts,
    /// Step size used by this update.
    pub learning_rate: f64,
    pub mean_step_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Minibatch steps taken; fewer than planned when the KL limit hit.
    pub minibatches: usize,
    pub log_std: [f64; 3],
    /// Stage after this update's promotion check.
    pub next_stage: usize,
}

/// Serialized trainer state stored next to checkpoint weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    format: String,
    ppo: PpoConfig,
    env: EnvConfig,
    curriculum: CurriculumSchedule,
    seed: u64,
    adam: AdamState,
    workers: Vec<WorkerSnapshot>,
    shuffle_rng: Rng,
    stage: usize,
    window: Vec<bool>,
    update: u64,
    env_steps: u64,
}

/// Path of the optimizer-state sidecar belonging to a weight file.
pub fn state_path(weights: &Path) -> PathBuf {
    let mut s = weights.as_os_str().to_owned();
    s.push(".state.json");
    PathBuf::from(s)
}

pub struct Trainer {
    ppo: PpoConfig,
    env: EnvConfig,
    curriculum: CurriculumSchedule,
    seed: u64,
    params: MlpParams,
    adam: AdamState,
    workers: Vec<Worker>,
    shuffle_rng: Rng,
    stage: usize,
    window: VecDeque<bool>,
    update: u64,
    env_steps: u64,
}

impl Trainer {
    pub fn new(ppo: PpoConfig, env: EnvConfig, curriculum: CurriculumSchedule, seed: u64) -> Result<Self, TrainError> {
        ppo.validate()?;
        curriculum.validate()?;
        env.validate()?;
        let stage_cfg = curriculum.env_config(&env, 0);
        let workers = (0..ppo.n_envs as u64)
            .map(|i| {
                let cfg = EnvConfig {
                    rng_seed: derive_stream_seed(seed, stream::ENV, i),
                    ..stage_cfg.clone()
                };
                let action_rng = rng_from_seed(derive_stream_seed(seed, stream::ACTION, i));
                Ok(Worker::new(DockingEnv::new(cfg)?, action_rng))
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        let params = MlpParams::init(ppo.hidden, &mut rng_from_seed(derive_stream_seed(seed, stream::INIT, 0)));
        Ok(Self {
            adam: AdamState::new(ppo.hidden),
            shuffle_rng: rng_from_seed(derive_stream_seed(seed, stream::SHUFFLE, 0)),
            window: VecDeque::with_capacity(curriculum.window),
            ppo,
            env,
            curriculum,
            seed,
            params,
            workers,
            stage: 0,
            update: 0,
            env_steps: 0,
        })
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn ppo_config(&self) -> &PpoConfig {
        &self.ppo
    }

    /// Base environment configuration, before curriculum adjustments.
    pub fn env_config(&self) -> &EnvConfig {
        &self.env
    }

    pub fn curriculum(&self) -> &CurriculumSchedule {
        &self.curriculum
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn updates_done(&self) -> u64 {
        self.update
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn is_finished(&self) -> bool {
        self.update >= self.ppo.num_updates()
    }

    /// Overrides the step budget, e.g. to extend a resumed run.
    pub fn set_total_steps(&mut self, total_steps: u64) -> Result<(), TrainError> {
        let ppo = PpoConfig {
            total_steps,
            ..self.ppo.clone()
        };
        ppo.validate()?;
        self.ppo = ppo;
        Ok(())
    }

    /// One collect, GAE and optimisation cycle followed by the curriculum
    /// check.
    pub fn run_update(&mut self) -> Result<UpdateMetrics, TrainError> {
        let stage = self.stage;
        let (mut buf, episodes) =
            collect_rollouts(
            &self.params,
            &mut self.workers,
            self.ppo.rollout_horizon,
            self.ppo.gamma,
            self.ppo.reward_scale,
        )?;
        buf.compute_gae(self.ppo.gamma, self.ppo.gae_lambda);
        let learning_rate = self.ppo.learning_rate_at(self.update);
        let cfg = PpoConfig {
            learning_rate,
            ..self.ppo.clone()
        };
        let diag = ppo_update(&mut self.params, &mut self.adam, &buf, &cfg, &mut self.shuffle_rng)?;
        self.update += 1;
        self.env_steps += buf.len() as u64;

        let mut outcomes = OutcomeCounts::default();
        for ep in &episodes {
            outcomes.add(ep.outcome.kind);
            if self.window.len() == self.curriculum.window {
                self.window.pop_front();
            }
            self.window.push_back(ep.outcome.kind == OutcomeKind::DockSuccess);
        }
        let window_success_rate = self.window_rate();
        if self.window.len() == self.curriculum.window
            && self.stage + 1 < self.curriculum.stages.len()
            && window_success_rate.is_some_and(|r| r >= self.curriculum.stages[self.stage].promotion)
        {
            self.promote()?;
        }

        let n = episodes.len();
        let mean = |f: &dyn Fn(&CompletedEpisode) -> f64| (n > 0).then(|| episodes.iter().map(f).sum::<f64>() / n as f64);
        Ok(UpdateMetrics {
            update: self.update,
            env_steps: self.env_steps,
            stage,
            episodes: n,
            mean_return: mean(&|e| e.episode_return),
            success_rate: (n > 0).then(|| outcomes.dock_success as f64 / n as f64),
            window_success_rate,
            mean_delta_m: mean(&|e| e.outcome.propellant_used),
            mean_delta_t: mean(&|e| e.outcome.elapsed),
            outcomes,
            learning_rate,
            mean_step_reward: buf.rewards.iter().sum::<f64>() / (buf.len() as f64 * self.ppo.reward_scale),
            policy_loss: diag.policy_loss,
            value_loss: diag.value_loss,
            entropy: diag.entropy,
            approx_kl: diag.approx_kl,
            clip_fraction: diag.clip_fraction,
            grad_norm: diag.grad_norm,
            minibatches: diag.minibatches,
            log_std: [self.params.log_std[0], self.params.log_std[1], self.params.log_std[2]],
            next_stage: self.stage,
        })
    }

    fn window_rate(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.window.iter().filter(|s| **s).count() as f64 / self.window.len() as f64)
    }

    /// Moves to the next stage. Running episodes keep going under the new
    /// tolerances and noise; the trailing window starts afresh.
    fn promote(&mut self) -> Result<(), TrainError> {
        self.stage += 1;
        self.window.clear();
        let stage_cfg = self.curriculum.env_config(&self.env, self.stage);
        for w in &mut self.workers {
            let cfg = EnvConfig {
                rng_seed: w.env.config().rng_seed,
                ..stage_cfg.clone()
            };
            w.env.set_config(cfg)?;
        }
        Ok(())
    }

    /// Runs updates until the step budget is spent or `stop` is raised.
    /// `on_update` sees every update's metrics and may checkpoint.
    pub fn train<F>(&mut self, stop: &AtomicBool, mut on_update: F) -> Result<(), TrainError>
    where
        F: FnMut(&Self, &UpdateMetrics) -> Result<(), TrainError>,
    {
        while !self.is_finished() && !stop.load(Ordering::SeqCst) {
            let m = self.run_update()?;
            on_update(self, &m)?;
        }
        Ok(())
    }

    /// Writes `weights` (rvd-mlp-v1) and its `.state.json` sidecar.
    pub fn save_checkpoint(&self, weights: &Path) -> Result<(), TrainError> {
        policy::save(&self.params, weights)?;
        let state = TrainerState {
            format: STATE_FORMAT_TAG.to_string(),
            ppo: self.ppo.clone(),
            env: self.env.clone(),
            curriculum: self.curriculum.clone(),
            seed: self.seed,
            adam: self.adam.clone(),
            workers: self.workers.iter().map(Worker::snapshot).collect(),
            shuffle_rng: self.shuffle_rng.clone(),
            stage: self.stage,
            window: self.window.iter().copied().collect(),
            update: self.update,
            env_steps: self.env_steps,
        };
        let path = state_path(weights);
        let text = serde_json::to_string(&state).map_err(|e| TrainError::State(e.to_string()))?;
        std::fs::write(&path, text).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Restores a trainer from `weights` and its sidecar.
    pub fn resume(weights: &Path) -> Result<Self, TrainError> {
        let params = policy::load(weights)?;
        let path = state_path(weights);
        let text = std::fs::read_to_string(&path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let s: TrainerState = serde_json::from_str(&text).map_err(|e| TrainError::State(e.to_string()))?;
        if s.format != STATE_FORMAT_TAG {
            return Err(TrainError::State(format!("unknown format tag {:?}", s.format)));
        }
        s.ppo.validate()?;
        s.curriculum.validate()?;
        if params.hidden() != s.ppo.hidden || s.adam.m.hidden() != s.ppo.hidden {
            return Err(TrainError::State("hidden width differs between weights and state".into()));
        }
        if s.workers.len() != s.ppo.n_envs || s.stage >= s.curriculum.stages.len() {
            return Err(TrainError::State("worker count or stage out of range".into()));
        }
        let workers = s.workers.into_iter().map(Worker::restore).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            ppo: s.ppo,
            env: s.env,
            curriculum: s.curriculum,
            seed: s.seed,
            params,
            adam: s.adam,
            workers,
            shuffle_rng: s.shuffle_rng,
            stage: s.stage,
            window: s.window.into(),
            update: s.update,
            env_steps: s.env_steps,
        })
    }
}

/// Trains from scratch and returns the final parameters with the per-update
/// log.
pub fn train(
    cfg: &PpoConfig,
    env_cfg: &EnvConfig,
    curriculum: &CurriculumSchedule,
    seed: u64,
) -> Result<(MlpParams, Vec<UpdateMetrics>), TrainError> {
    let mut t = Trainer::new(cfg.clone(), env_cfg.clone(), curriculum.clone(), seed)?;
    let mut log = Vec::new();
    t.train(&AtomicBool::new(false), |_, m| {
        log.push(m.clone());
        Ok(())
    })?;
    Ok((t.params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PpoConfig {
        PpoConfig {
            hidden: 8,
            n_envs: 2,
            rollout_horizon: 64,
            minibatch_size: 32,
            epochs_per_update: 2,
            total_steps: 3 * 128,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn one_rollout_budget_runs_one_update() {
        let cfg = PpoConfig {
            total_steps: 128,
            ..tiny()
        };
        let (_, log) = train(&cfg, &EnvConfig::default(), &CurriculumSchedule::default(), 3).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].env_steps, 128);
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let run = || train(&tiny(), &EnvConfig::default(), &CurriculumSchedule::default(), 11).unwrap();
        let (pa, la) = run();
        let (pb, lb) = run();
        assert_eq!(pa, pb);
        assert_eq!(serde_json::to_string(&la).unwrap(), serde_json::to_string(&lb).unwrap());
    }

    #[test]
    fn resume_reproduces_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let (full_params, full) = train(&tiny(), &EnvConfig::default(), &CurriculumSchedule::default(), 5).unwrap();

        let mut t = Trainer::new(tiny(), EnvConfig::default(), CurriculumSchedule::default(), 5).unwrap();
        let first = t.run_update().unwrap();
        let ckpt = dir.path().join("ckpt.json");
        t.save_checkpoint(&ckpt).unwrap();
        drop(t);
        let mut r = Trainer::resume(&ckpt).unwrap();
        let mut rest = vec![first];
        r.train(&AtomicBool::new(false), |_, m| {
            rest.push(m.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(serde_json::to_string(&full).unwrap(), serde_json::to_string(&rest).unwrap());
        assert_eq!(&full_params, r.params());
    }

    #[test]
    fn stop_flag_halts_before_next_update() {
        let mut t = Trainer::new(tiny(), EnvConfig::default(), CurriculumSchedule::default(), 1).unwrap();
        let stop = AtomicBool::new(false);
        let mut n = 0;
        t.train(&stop, |_, _| {
            n += 1;
            stop.store(true, Ordering::SeqCst);
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 1);
        assert_eq!(t.updates_done(), 1);
    }

    #[test]
    fn promotion_is_monotone_and_resets_window() {
        // Docking tolerances so loose that nearly any episode in the cone docks.
        let mut curriculum = CurriculumSchedule::standard(0.0);
        curriculum.window = 2;
        for s in &mut curriculum.stages {
            s.promotion = 0.0;
        }
        let cfg = PpoConfig {
            total_steps: 4 * 128,
            ..tiny()
        };
        let (_, log) = train(&cfg, &EnvConfig { max_steps: 20, ..EnvConfig::default() }, &curriculum, 2).unwrap();
        let stages: Vec<usize> = log.iter().map(|m| m.next_stage).collect();
        assert!(stages.windows(2).all(|w| w[1] >= w[0]));
        assert!(stages.windows(2).all(|w| w[1] <= w[0] + 1));
        assert_eq!(*stages.last().unwrap(), 3);
        for m in &log {
            assert_eq!(m.outcomes.total(), m.episodes);
        }
    }

    #[test]
    fn resume_rejects_missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let t = Trainer::new(tiny(), EnvConfig::default(), CurriculumSchedule::default(), 1).unwrap();
        let w = dir.path().join("w.json");
        t.save_checkpoint(&w).unwrap();
        std::fs::remove_file(state_path(&w)).unwrap();
        assert!(matches!(Trainer::resume(&w), Err(TrainError::Io { .. })));
    }
}
