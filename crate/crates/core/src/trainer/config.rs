use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::EnvConfig;
use crate::policy::DEFAULT_HIDDEN;

/// PPO hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// SGD minibatch size.
    pub minibatch_size: usize,
    /// Environment steps to train for, summed over all environments.
    pub total_steps: u64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_update: usize,
    /// Steps collected per environment between updates.
    pub rollout_horizon: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub n_envs: usize,
    /// Global gradient-norm limit.
    pub grad_clip_norm: f64,
    pub hidden: usize,
    pub normalize_advantages: bool,
    /// Write a checkpoint every this many updates (0 disables periodic ones).
    pub checkpoint_every: u64,
    /// Factor applied to rewards before they enter the value targets.
    pub reward_scale: f64,
    /// Stop an update's remaining minibatches once the approximate KL
    /// divergence of a minibatch exceeds `1.5·target_kl`.
    pub target_kl: Option<f64>,
    /// Decay the learning rate linearly to zero over the run.
    pub anneal_lr: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            learning_rate: 5e-5,
            minibatch_size: 64,
            total_steps: 25_000_000,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs_per_update: 10,
            rollout_horizon: 2048,
            value_coef: 0.5,
            entropy_coef: 0.0,
            n_envs: 8,
            grad_clip_norm: 0.5,
            hidden: DEFAULT_HIDDEN,
            normalize_advantages: true,
            checkpoint_every: 10,
            reward_scale: 1.0,
            target_kl: None,
            anneal_lr: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_epsilon > 0.0) {
            return fail(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        if self.minibatch_size == 0 || self.epochs_per_update == 0 || self.rollout_horizon == 0 || self.n_envs == 0 {
            return fail("minibatch_size, epochs_per_update, rollout_horizon and n_envs must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return fail(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        if self.target_kl.is_some_and(|k| !(k > 0.0)) {
            return fail("target_kl must be positive when set".into());
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return fail("value_coef and entropy_coef must be non-negative".into());
        }
        if self.total_steps < self.steps_per_update() {
            return fail(format!(
                "total_steps {} is below one rollout ({} steps)",
                self.total_steps,
                self.steps_per_update()
            ));
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_horizon * self.n_envs) as u64
    }

    /// Step size for the update with zero-based index `update`.
    pub fn learning_rate_at(&self, update: u64) -> f64 {
        if !self.anneal_lr {
            return self.learning_rate;
        }
        let n = self.num_updates().max(1);
        self.learning_rate * (1.0 - update.min(n) as f64 / n as f64)
    }

    pub fn num_updates(&self) -> u64 {
        self.total_steps / self.steps_per_update()
    }
}

/// One curriculum stage: docking tolerances scaled by `tolerance_scale`,
/// navigation noise `alpha`, actuation noise on or off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumStage {
    pub tolerance_scale: f64,
    pub alpha: f64,
    pub actuation_noise: bool,
    /// Trailing-window success rate that promotes to the next stage.
    pub promotion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub stages: Vec<CurriculumStage>,
    /// Episodes in the trailing success window.
    pub window: usize,
}

impl CurriculumSchedule {
    /// Relaxed tolerances without actuation noise, then actuation noise,
    /// then the real tolerances, then navigation noise at `target_alpha`.
    pub fn standard(target_alpha: f64) -> Self {
        let stage = |tolerance_scale, alpha, actuation_noise| CurriculumStage {
            tolerance_scale,
            alpha,
            actuation_noise,
            promotion: 0.8,
        };
        Self {
            stages: vec![
                stage(100.0, 0.0, false),
                stage(10.0, 0.0, true),
                stage(1.0, 0.0, true),
                stage(1.0, target_alpha, true),
            ],
            window: 100,
        }
    }

    /// Only the first stage of [`Self::standard`].
    pub fn relaxed_only() -> Self {
        let mut s = Self::standard(0.0);
        s.stages.truncate(1);
        s
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.stages.is_empty() {
            return Err(TrainError::Config("curriculum needs at least one stage".into()));
        }
        if self.window == 0 {
            return Err(TrainError::Config("curriculum window must be at least 1".into()));
        }
        for s in &self.stages {
            if !(s.tolerance_scale.is_finite() && s.tolerance_scale > 0.0) || !(s.alpha >= 0.0) {
                return Err(TrainError::Config(format!("invalid curriculum stage {s:?}")));
            }
        }
        if self
            .stages
            .windows(2)
            .any(|w| w[1].tolerance_scale > w[0].tolerance_scale)
        {
            return Err(TrainError::Config("tolerance_scale must be non-increasing across stages".into()));
        }
        Ok(())
    }

    /// The environment configuration for `stage`, derived from `base`.
    pub fn env_config(&self, base: &EnvConfig, stage: usize) -> EnvConfig {
        let s = &self.stages[stage];
        EnvConfig {
            tolerances: base.tolerances.scaled(s.tolerance_scale),
            alpha: s.alpha,
            actuation_noise: s.actuation_noise && base.actuation_noise,
            ..base.clone()
        }
    }
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self::standard(0.0)
    }
}
