//! Single-precision copy of the network for deployment-style inference.

use super::{MlpParams, PolicyOutput, ACT_DIM, OBS_DIM};

#[derive(Debug, Clone)]
pub struct MlpParams32 {
    hidden: usize,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    w_a: Vec<f32>,
    b_a: Vec<f32>,
    w_v: Vec<f32>,
    b_v: f32,
    log_std: [f32; ACT_DIM],
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl From<&MlpParams> for MlpParams32 {
    fn from(p: &MlpParams) -> Self {
        Self {
            hidden: p.hidden(),
            w1: narrow(&p.w1),
            b1: narrow(&p.b1),
            w2: narrow(&p.w2),
            b2: narrow(&p.b2),
            w_a: narrow(&p.w_a),
            b_a: narrow(&p.b_a),
            w_v: narrow(&p.w_v),
            b_v: p.b_v[0] as f32,
            log_std: [p.log_std[0] as f32, p.log_std[1] as f32, p.log_std[2] as f32],
        }
    }
}

impl MlpParams32 {
    pub fn forward_array(&self, x: &[f32; OBS_DIM]) -> PolicyOutput {
        let h = self.hidden;
        let mut z1 = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            z1.iter_mut()
                .zip(&self.w1[i * h..(i + 1) * h])
                .for_each(|(z, w)| *z += xi * w);
        }
        z1.iter_mut().for_each(|v| *v = v.tanh());
        let mut z2 = self.b2.clone();
        for (i, &hi) in z1.iter().enumerate() {
            z2.iter_mut()
                .zip(&self.w2[i * h..(i + 1) * h])
                .for_each(|(z, w)| *z += hi * w);
        }
        z2.iter_mut().for_each(|v| *v = v.tanh());
        let mut za = [self.b_a[0], self.b_a[1], self.b_a[2]];
        let mut v = self.b_v;
        for (i, &hi) in z2.iter().enumerate() {
            let row = &self.w_a[i * ACT_DIM..(i + 1) * ACT_DIM];
            za[0] += hi * row[0];
            za[1] += hi * row[1];
            za[2] += hi * row[2];
            v += hi * self.w_v[i];
        }
        PolicyOutput {
            action_mean: za.map(|a| a.tanh() as f64),
            value: v as f64,
            log_std: self.log_std.map(|l| l as f64),
        }
    }
}
