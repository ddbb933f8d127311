//! Generalized advantage estimation.

/// Advantages and returns for one environment's sequence.
///
/// `dones[t]` marks that the episode ended at step `t`, so `values[t + 1]`
/// (or `last_value` at the end of the sequence) is not bootstrapped from.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "sequence lengths differ");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales `x` in place to zero mean and unit population standard
/// deviation. Leaves the scale alone when the spread is negligible.
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
    let std = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if std > 1e-12 {
        x.iter_mut().for_each(|v| *v /= std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Double loop over the TD residuals, cut at episode ends.
    fn brute_force(r: &[f64], v: &[f64], d: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let delta: Vec<f64> = (0..n)
            .map(|t| {
                let nv = if t + 1 == n { last } else { v[t + 1] };
                r[t] + if d[t] { 0.0 } else { g * nv } - v[t]
            })
            .collect();
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut coef = 1.0;
                for k in t..n {
                    acc += coef * delta[k];
                    if d[k] {
                        break;
                    }
                    coef *= g * l;
                }
                acc
            })
            .collect()
    }

    fn random_seq(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
        let mut rng = rng_from_seed(seed);
        let r = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d = (0..n).map(|_| rng.gen_bool(0.15)).collect();
        (r, v, d, rng.gen_range(-5.0..5.0))
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let (r, v, d, last) = random_seq(1, 20);
        let (adv, _) = gae(&r, &v, &d, last, 0.99, 0.0);
        for t in 0..20 {
            let nv = if t == 19 { last } else { v[t + 1] };
            let delta = r[t] + 0.99 * nv * if d[t] { 0.0 } else { 1.0 } - v[t];
            assert_eq!(adv[t], delta);
        }
    }

    #[test]
    fn lambda_one_is_discounted_return_minus_value() {
        let (r, v, _, last) = random_seq(2, 20);
        let d = vec![false; 20];
        let g = 0.97;
        let (adv, ret) = gae(&r, &v, &d, last, g, 1.0);
        for t in 0..20 {
            let mut disc = 0.0;
            for k in t..20 {
                disc += g.powi((k - t) as i32) * r[k];
            }
            disc += g.powi((20 - t) as i32) * last;
            assert!((adv[t] - (disc - v[t])).abs() < 1e-10);
            assert!((ret[t] - disc).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_inputs_give_zero_advantages() {
        let (adv, ret) = gae(&[0.0; 10], &[0.0; 10], &[false; 10], 0.0, 0.999, 0.95);
        assert!(adv.iter().chain(&ret).all(|x| *x == 0.0));
    }

    #[test]
    fn normalization_moments() {
        let mut rng = rng_from_seed(3);
        let mut x: Vec<f64> = (0..1000).map(|_| rng.gen_range(-3.0..10.0)).collect();
        normalize(&mut x);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>(), n in 1usize..=50, g in 0.5f64..1.0, l in 0.0f64..=1.0) {
            let (r, v, d, last) = random_seq(seed, n);
            let (adv, ret) = gae(&r, &v, &d, last, g, l);
            let want = brute_force(&r, &v, &d, last, g, l);
            for t in 0..n {
                prop_assert!((adv[t] - want[t]).abs() < 1e-10);
                prop_assert!((ret[t] - (want[t] + v[t])).abs() < 1e-10);
            }
        }
    }
}
