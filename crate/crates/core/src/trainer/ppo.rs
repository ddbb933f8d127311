//! Clipped-surrogate PPO update.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::gae::normalize;
use super::{PpoConfig, RolloutBuffer, TrainError};
use crate::policy::{gaussian_entropy, gaussian_log_prob, MlpParams, OutputGrads, ACT_DIM};
use crate::seed::Rng;

/// Averages over all minibatches of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
    /// True when the KL limit ended the update early.
    pub stopped_early: bool,
}

/// Loss terms and parameter gradients for one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grads: MlpParams,
}

/// Loss `-min(ρA, clip(ρ)A) + c_v (V - R)² - c_e H`, averaged over the rows
/// `idx` of `buf`, with `adv` the (already normalised) advantages.
pub fn minibatch_loss(
    params: &MlpParams,
    buf: &RolloutBuffer,
    adv: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<MinibatchLoss, TrainError> {
    let b = idx.len();
    let inv_b = 1.0 / b as f64;
    let obs: Vec<_> = idx.iter().map(|&i| buf.obs[i]).collect();
    let cache = params.forward_batch(&obs);
    let log_std = [params.log_std[0], params.log_std[1], params.log_std[2]];
    let sigma_inv = log_std.map(|l| (-l).exp());
    let eps = cfg.clip_epsilon;

    let mut g = OutputGrads::zeros(b);
    let (mut policy_loss, mut value_loss, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for (r, &i) in idx.iter().enumerate() {
        let out = cache.output(r, &log_std);
        let raw = &buf.actions[i];
        let logp = gaussian_log_prob(raw, &out.action_mean, &log_std);
        let log_ratio = logp - buf.log_probs[i];
        let ratio = log_ratio.exp();
        let a = adv[i];

        let surr = ratio * a;
        let surr_clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
        policy_loss -= surr.min(surr_clipped);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        kl += (ratio - 1.0) - log_ratio;

        // d(-min)/dρ is -A where the unclipped term is selected, else 0.
        let dlogp = if surr <= surr_clipped { -a * ratio * inv_b } else { 0.0 };
        for k in 0..ACT_DIM {
            let z = (raw[k] - out.action_mean[k]) * sigma_inv[k];
            g.mean[r * ACT_DIM + k] = dlogp * z * sigma_inv[k];
            g.log_std[k] += dlogp * (z * z - 1.0);
        }

        let err = out.value - buf.returns[i];
        value_loss += err * err;
        g.value[r] = 2.0 * cfg.value_coef * err * inv_b;
    }
    let entropy = gaussian_entropy(&log_std);
    for gl in g.log_std.iter_mut() {
        *gl -= cfg.entropy_coef;
    }
    policy_loss *= inv_b;
    value_loss *= inv_b;
    let loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    let grads = params.backward(&cache, &g)?;
    Ok(MinibatchLoss {
        loss,
        policy_loss,
        value_loss,
        entropy,
        approx_kl: kl * inv_b,
        clip_fraction: clipped as f64 * inv_b,
        grads,
    })
}

/// Advantages of `buf`, normalised over the whole buffer when configured.
pub fn prepared_advantages(buf: &RolloutBuffer, cfg: &PpoConfig) -> Vec<f64> {
    let mut adv = buf.advantages.clone();
    if cfg.normalize_advantages {
        normalize(&mut adv);
    }
    adv
}

/// Scales `grads` down to `max_norm` if needed; returns the original norm.
pub fn clip_grad_norm(grads: &mut MlpParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Runs `epochs_per_update` shuffled passes of minibatch Adam steps over
/// `buf`, which must already hold advantages and returns.
pub fn ppo_update(
    params: &mut MlpParams,
    adam: &mut AdamState,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateDiagnostics, TrainError> {
    if buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(TrainError::Config("rollout buffer has no advantages; run compute_gae first".into()));
    }
    let adv = prepared_advantages(buf, cfg);
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut diag = UpdateDiagnostics::default();
    'epochs: for epoch in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for (mb, idx) in order.chunks(cfg.minibatch_size).enumerate() {
            let mut l = minibatch_loss(params, buf, &adv, idx, cfg)?;
            if cfg.target_kl.is_some_and(|k| l.approx_kl > 1.5 * k) {
                diag.stopped_early = true;
                break 'epochs;
            }
            if !l.loss.is_finite() || l.grads.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFinite {
                    epoch,
                    minibatch: mb,
                    indices: idx.to_vec(),
                });
            }
            diag.grad_norm += clip_grad_norm(&mut l.grads, cfg.grad_clip_norm);
            adam_step(params, &l.grads, adam, cfg.learning_rate);
            params.clamp_log_std();
            diag.policy_loss += l.policy_loss;
            diag.value_loss += l.value_loss;
            diag.entropy += l.entropy;
            diag.approx_kl += l.approx_kl;
            diag.clip_fraction += l.clip_fraction;
            diag.minibatches += 1;
        }
    }
    let n = diag.minibatches.max(1) as f64;
    diag.policy_loss /= n;
    diag.value_loss /= n;
    diag.entropy /= n;
    diag.approx_kl /= n;
    diag.clip_fraction /= n;
    diag.grad_norm /= n;
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{sample_action, OBS_DIM};
    use crate::seed::rng_from_seed;
    use rand::Rng as _;

    const H: usize = 8;

    /// A buffer sampled from `params` itself, so every importance ratio is 1.
    fn on_policy_buffer(params: &MlpParams, n: usize, seed: u64) -> RolloutBuffer {
        let mut rng = rng_from_seed(seed);
        let mut buf = RolloutBuffer {
            n_envs: 1,
            horizon: n,
            ..Default::default()
        };
        for _ in 0..n {
            let mut x = [0.0; OBS_DIM];
            x.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let out = params.forward_array(&x);
            let s = sample_action(&out, &mut rng);
            buf.obs.push(x);
            buf.actions.push(s.raw);
            buf.log_probs.push(s.log_prob);
            buf.values.push(out.value);
            buf.rewards.push(rng.gen_range(-1.0..1.0));
            buf.dones.push(false);
            buf.truncated.push(false);
            buf.advantages.push(rng.gen_range(-2.0..2.0));
            buf.returns.push(rng.gen_range(-2.0..2.0));
        }
        buf.last_values = vec![0.0];
        buf
    }

    fn params(seed: u64) -> MlpParams {
        let mut p = MlpParams::init(H, &mut rng_from_seed(seed));
        p.w_a.iter_mut().for_each(|w| *w *= 30.0);
        p
    }

    #[test]
    fn fresh_buffer_has_unit_ratio_and_no_clipping() {
        let p = params(1);
        let buf = on_policy_buffer(&p, 16, 2);
        let cfg = PpoConfig::default();
        let idx: Vec<usize> = (0..16).collect();
        let l = minibatch_loss(&p, &buf, &buf.advantages, &idx, &cfg).unwrap();
        let mean_adv = buf.advantages.iter().sum::<f64>() / 16.0;
        assert!((l.policy_loss + mean_adv).abs() < 1e-12);
        assert_eq!(l.clip_fraction, 0.0);
        assert!(l.approx_kl.abs() < 1e-12);
    }

    #[test]
    fn clipped_branch_has_zero_policy_gradient() {
        let p = params(3);
        let mut buf = on_policy_buffer(&p, 1, 4);
        let eps = 0.2;
        // Old log-prob lowered so that ρ = 1 + 2ε.
        buf.log_probs[0] -= (1.0 + 2.0 * eps as f64).ln();
        buf.advantages[0] = 1.5;
        let cfg = PpoConfig {
            clip_epsilon: eps,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let l = minibatch_loss(&p, &buf, &buf.advantages, &[0], &cfg).unwrap();
        assert_eq!(l.clip_fraction, 1.0);
        assert!((l.policy_loss + (1.0 + eps) * 1.5).abs() < 1e-12);
        assert!(l.grads.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn unclipped_gradient_equals_vanilla_policy_gradient() {
        let p = params(5);
        let buf = on_policy_buffer(&p, 6, 6);
        let cfg = PpoConfig {
            clip_epsilon: f64::INFINITY,
            value_coef: 0.0,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let idx: Vec<usize> = (0..6).collect();
        let l = minibatch_loss(&p, &buf, &buf.advantages, &idx, &cfg).unwrap();

        // -(1/B) Σ A ∇log π(a|s), assembled per sample from the log-density
        // derivatives and pushed through the network one row at a time.
        let mut want = MlpParams::zeros(H);
        for &i in &idx {
            let out = p.forward_array(&buf.obs[i]);
            let mut g = OutputGrads::zeros(1);
            for k in 0..ACT_DIM {
                let s2 = (2.0 * p.log_std[k]).exp();
                let d = buf.actions[i][k] - out.action_mean[k];
                g.mean[k] = -buf.advantages[i] * d / s2 / 6.0;
                g.log_std[k] = -buf.advantages[i] * (d * d / s2 - 1.0) / 6.0;
            }
            let gi = p.backward(&p.forward_batch(&[buf.obs[i]]), &g).unwrap();
            want.add_scaled(&gi, 1.0);
        }
        for (a, b) in l.grads.tensors().iter().zip(want.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn single_transition_update_is_one_adam_step() {
        let p0 = params(7);
        let buf = on_policy_buffer(&p0, 1, 8);
        let cfg = PpoConfig {
            epochs_per_update: 1,
            ..PpoConfig::default()
        };
        let mut p = p0.clone();
        let mut adam = AdamState::new(H);
        ppo_update(&mut p, &mut adam, &buf, &cfg, &mut rng_from_seed(9)).unwrap();

        // One sample: the normalised advantage is 0, leaving only the value
        // term 2·c_v·(V - R) on the value output.
        let v = p0.forward_array(&buf.obs[0]).value;
        let mut g = OutputGrads::zeros(1);
        g.value[0] = 2.0 * cfg.value_coef * (v - buf.returns[0]);
        let mut grads = p0.backward(&p0.forward_batch(&[buf.obs[0]]), &g).unwrap();
        let norm = grads.l2_norm();
        if norm > cfg.grad_clip_norm {
            grads.scale(cfg.grad_clip_norm / norm);
        }
        for ((a, b), gg) in p.tensors().iter().zip(p0.tensors()).zip(grads.tensors()) {
            for i in 0..a.len() {
                let want = b[i] - cfg.learning_rate * gg[i] / (gg[i].abs() + 1e-8);
                assert!((a[i] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalised_advantages_have_unit_moments() {
        let p = params(10);
        let buf = on_policy_buffer(&p, 500, 11);
        let adv = prepared_advantages(&buf, &PpoConfig::default());
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_finite_loss_aborts_with_minibatch() {
        let p = params(12);
        let mut buf = on_policy_buffer(&p, 4, 13);
        buf.returns[2] = f64::NAN;
        let cfg = PpoConfig {
            minibatch_size: 2,
            normalize_advantages: false,
            ..PpoConfig::default()
        };
        let mut q = p.clone();
        let err = ppo_update(&mut q, &mut AdamState::new(H), &buf, &cfg, &mut rng_from_seed(1)).unwrap_err();
        match err {
            TrainError::NonFinite { epoch, indices, .. } => {
                assert_eq!(epoch, 0);
                assert!(indices.contains(&2));
            }
            other => panic!("{other:?}"),
        }
    }

    /// Contextless bandit with reward `-|a - target|²`: repeated updates
    /// must move the mean action to the target and shrink the spread.
    #[test]
    fn learns_quadratic_bandit() {
        let target = [0.5, -0.3, 0.1];
        let mut p = MlpParams::init(H, &mut rng_from_seed(20));
        let mut adam = AdamState::new(H);
        let mut rng = rng_from_seed(21);
        let cfg = PpoConfig {
            learning_rate: 3e-3,
            minibatch_size: 64,
            epochs_per_update: 4,
            ..PpoConfig::default()
        };
        let x = [0.1, -0.2, 0.3, 0.0, 0.05, -0.05, 1.0];
        let std0 = p.log_std.clone();
        for _ in 0..60 {
            let out = p.forward_array(&x);
            let mut buf = RolloutBuffer {
                n_envs: 1,
                horizon: 256,
                ..Default::default()
            };
            for _ in 0..256 {
                let s = sample_action(&out, &mut rng);
                let r: f64 = -(0..3).map(|k| (s.raw[k] - target[k]).powi(2)).sum::<f64>();
                buf.obs.push(x);
                buf.actions.push(s.raw);
                buf.log_probs.push(s.log_prob);
                buf.values.push(out.value);
                buf.rewards.push(r);
                buf.dones.push(true);
                buf.truncated.push(false);
                buf.advantages.push(r - out.value);
                buf.returns.push(r);
            }
            ppo_update(&mut p, &mut adam, &buf, &cfg, &mut rng).unwrap();
        }
        let out = p.forward_array(&x);
        for k in 0..3 {
            assert!((out.action_mean[k] - target[k]).abs() < 0.05, "{:?}", out.action_mean);
            assert!(p.log_std[k] < std0[k], "{:?}", p.log_std);
        }
    }

    #[test]
    fn kl_limit_stops_update_early() {
        let p = params(16);
        let buf = on_policy_buffer(&p, 256, 17);
        let cfg = PpoConfig {
            learning_rate: 1e-2,
            target_kl: Some(1e-9),
            ..PpoConfig::default()
        };
        let mut q = p.clone();
        let d = ppo_update(&mut q, &mut AdamState::new(H), &buf, &cfg, &mut rng_from_seed(1)).unwrap();
        assert!(d.stopped_early);
        // The first minibatch is on-policy, so at least one step is taken.
        assert!(d.minibatches >= 1 && d.minibatches < 40);
    }

    #[test]
    fn update_requires_advantages() {
        let p = params(14);
        let mut buf = on_policy_buffer(&p, 4, 15);
        buf.advantages.clear();
        let mut q = p.clone();
        assert!(ppo_update(&mut q, &mut AdamState::new(H), &buf, &PpoConfig::default(), &mut rng_from_seed(1)).is_err());
    }
}
