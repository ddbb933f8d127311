//! Rollout collection across a set of environments.

use serde::{Deserialize, Serialize};

use super::{gae, TrainError};
use crate::env::{DockingEnv, EnvSnapshot, EpisodeOutcome};
use crate::policy::{sample_action, MlpParams, ACT_DIM, OBS_DIM};
use crate::seed::Rng;

/// One environment together with the RNG that samples its actions.
#[derive(Debug, Clone)]
pub struct Worker {
    pub env: DockingEnv,
    pub action_rng: Rng,
    /// Undiscounted return of the running episode.
    pub episode_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerSnapshot {
    pub env: EnvSnapshot,
    pub action_rng: Rng,
    pub episode_return: f64,
}

impl Worker {
    pub fn new(env: DockingEnv, action_rng: Rng) -> Self {
        Self {
            env,
            action_rng,
            episode_return: 0.0,
        }
    }

    pub fn snapshot(&self) -> WorkerSnapshot {
        WorkerSnapshot {
            env: self.env.snapshot(),
            action_rng: self.action_rng.clone(),
            episode_return: self.episode_return,
        }
    }

    pub fn restore(s: WorkerSnapshot) -> Result<Self, TrainError> {
        Ok(Self {
            env: DockingEnv::restore(s.env)?,
            action_rng: s.action_rng,
            episode_return: s.episode_return,
        })
    }
}

/// A finished episode seen during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletedEpisode {
    pub env_index: usize,
    pub outcome: EpisodeOutcome,
    pub episode_return: f64,
}

/// Transitions stored time-major: entry `t * n_envs + e` is step `t` of
/// environment `e`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: Vec<[f64; OBS_DIM]>,
    /// Pre-clip Gaussian samples.
    pub actions: Vec<[f64; ACT_DIM]>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// True where the episode ended on the time limit; the reward there
    /// already includes the bootstrapped `γ·V(s_T)`.
    pub truncated: Vec<bool>,
    /// Value of each environment's observation after the last step.
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn column<T: Copy>(&self, data: &[T], e: usize) -> Vec<T> {
        (0..self.horizon).map(|t| data[t * self.n_envs + e]).collect()
    }

    /// Fills `advantages` and `returns` environment by environment.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) {
        let n = self.len();
        self.advantages = vec![0.0; n];
        self.returns = vec![0.0; n];
        for e in 0..self.n_envs {
            let r = self.column(&self.rewards, e);
            let v = self.column(&self.values, e);
            let d = self.column(&self.dones, e);
            let (adv, ret) = gae::gae(&r, &v, &d, self.last_values[e], gamma, lambda);
            for t in 0..self.horizon {
                self.advantages[t * self.n_envs + e] = adv[t];
                self.returns[t * self.n_envs + e] = ret[t];
            }
        }
    }
}

/// Runs every worker for `horizon` steps under the stochastic policy.
///
/// Stored rewards are multiplied by `reward_scale`. Episodes that end are
/// reset in place. Time-limit endings are bootstrapped by adding `γ·V(s_T)`
/// to the final reward, since the limit is not part of the task.
pub fn collect_rollouts(
    params: &MlpParams,
    workers: &mut [Worker],
    horizon: usize,
    gamma: f64,
    reward_scale: f64,
) -> Result<(RolloutBuffer, Vec<CompletedEpisode>), TrainError> {
    let n = workers.len();
    let cap = n * horizon;
    let mut buf = RolloutBuffer {
        n_envs: n,
        horizon,
        obs: Vec::with_capacity(cap),
        actions: Vec::with_capacity(cap),
        log_probs: Vec::with_capacity(cap),
        rewards: Vec::with_capacity(cap),
        values: Vec::with_capacity(cap),
        dones: Vec::with_capacity(cap),
        truncated: Vec::with_capacity(cap),
        ..Default::default()
    };
    let mut episodes = Vec::new();

    for _ in 0..horizon {
        let obs: Vec<[f64; OBS_DIM]> = workers.iter().map(|w| w.env.last_observation().to_array()).collect();
        let cache = params.forward_batch(&obs);
        for (e, w) in workers.iter_mut().enumerate() {
            let out = cache.output(e, &params.log_std);
            let sampled = sample_action(&out, &mut w.action_rng);
            let step = w.env.step(&sampled.action).map_err(|source| TrainError::Env {
                env_index: e,
                step: w.env.steps(),
                source,
            })?;
            let mut reward = reward_scale * step.reward;
            let mut truncated = false;
            w.episode_return += step.reward;
            if let Some(outcome) = step.outcome {
                if outcome.kind.is_truncation() {
                    reward += gamma * params.forward(&step.obs).value;
                    truncated = true;
                }
                episodes.push(CompletedEpisode {
                    env_index: e,
                    outcome,
                    episode_return: w.episode_return,
                });
                w.episode_return = 0.0;
                w.env.reset();
            }
            buf.obs.push(obs[e]);
            buf.actions.push(sampled.raw);
            buf.log_probs.push(sampled.log_prob);
            buf.rewards.push(reward);
            buf.values.push(out.value);
            buf.dones.push(step.done);
            buf.truncated.push(truncated);
        }
    }
    let last: Vec<[f64; OBS_DIM]> = workers.iter().map(|w| w.env.last_observation().to_array()).collect();
    buf.last_values = params.forward_batch(&last).value().to_vec();
    Ok((buf, episodes))
}
