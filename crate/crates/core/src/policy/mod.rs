//! Actor-critic MLP: `7 → H → H → (3 | 1)` with tanh hidden layers, a tanh
//! action head, a linear value head and a state-independent log standard
//! deviation. `H` is 256 for the controller; other widths are accepted so
//! tests can use small networks.
//!
//! Weights are stored input-major (`W[i][j]` connects input `i` to unit `j`),
//! so a batch forward pass is `X·W + b`. Batched passes go through
//! `matrixmultiply`; the single-observation path uses plain loops.

mod io;
mod lowp;

pub use io::{load, load_str, save, to_json_string, FORMAT_TAG};
pub use lowp::MlpParams32;

use matrixmultiply::dgemm;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Observation};

pub const OBS_DIM: usize = Observation::DIM;
pub const ACT_DIM: usize = 3;
pub const DEFAULT_HIDDEN: usize = 256;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("shape mismatch in {field}: expected {expected:?}, found {found:?}")]
    Shape {
        field: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in {field}[{index}]")]
    NonFinite { field: &'static str, index: usize },
    #[error("malformed weight document: {0}")]
    Parse(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameters of the network. Doubles as the gradient structure.
///
/// The serde derive is for optimizer-state sidecars; weight files use the
/// `rvd-mlp-v1` document written by [`save`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w_a: Vec<f64>,
    pub b_a: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Tensor names in serialization order.
pub const TENSOR_NAMES: [&str; 9] = ["W1", "b1", "W2", "b2", "W_a", "b_a", "W_v", "b_v", "log_std"];

impl MlpParams {
    pub fn zeros(hidden: usize) -> Self {
        let h = hidden;
        Self {
            hidden,
            w1: vec![0.0; OBS_DIM * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h * h],
            b2: vec![0.0; h],
            w_a: vec![0.0; h * ACT_DIM],
            b_a: vec![0.0; ACT_DIM],
            w_v: vec![0.0; h],
            b_v: vec![0.0; 1],
            log_std: vec![0.0; ACT_DIM],
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Expected `[rows, cols]` (or `[len]`) of each tensor for width `h`.
    pub fn shapes(hidden: usize) -> [Vec<usize>; 9] {
        let h = hidden;
        [
            vec![OBS_DIM, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, ACT_DIM],
            vec![ACT_DIM],
            vec![h, 1],
            vec![1],
            vec![ACT_DIM],
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w_a, &self.b_a, &self.w_v, &self.b_v, &self.log_std,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 9] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_a,
            &mut self.b_a,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.log_std,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks tensor lengths, finiteness and the log-std range.
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.hidden == 0 {
            return Err(PolicyError::Config("hidden width must be positive".into()));
        }
        let shapes = Self::shapes(self.hidden);
        for ((name, t), shape) in TENSOR_NAMES.iter().zip(self.tensors()).zip(shapes.iter()) {
            let n: usize = shape.iter().product();
            if t.len() != n {
                return Err(PolicyError::Shape {
                    field: name,
                    expected: shape.clone(),
                    found: vec![t.len()],
                });
            }
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(PolicyError::NonFinite { field: name, index: i });
            }
        }
        if let Some(&v) = self.log_std.iter().find(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(*v)) {
            return Err(PolicyError::Config(format!(
                "log_std {v} outside [{LOG_STD_MIN}, {LOG_STD_MAX}]"
            )));
        }
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Orthogonal initialisation: gain √2 on hidden layers, 0.01 on the action
    /// head and 1 on the value head; zero biases; `log_std = ln 0.3`.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden);
        let g = 2f64.sqrt();
        p.w1 = orthogonal(OBS_DIM, hidden, g, rng);
        p.w2 = orthogonal(hidden, hidden, g, rng);
        p.w_a = orthogonal(hidden, ACT_DIM, 0.01, rng);
        p.w_v = orthogonal(hidden, 1, 1.0, rng);
        p.log_std = vec![0.3f64.ln(); ACT_DIM];
        p
    }

    /// Deterministic forward pass for one observation.
    pub fn forward(&self, obs: &Observation) -> PolicyOutput {
        self.forward_array(&obs.to_array())
    }

    pub fn forward_array(&self, x: &[f64; OBS_DIM]) -> PolicyOutput {
        let h = self.hidden;
        let mut z1 = self.b1.clone();
        for (i, xi) in x.iter().enumerate() {
            axpy(*xi, &self.w1[i * h..(i + 1) * h], &mut z1);
        }
        z1.iter_mut().for_each(|v| *v = v.tanh());
        let mut z2 = self.b2.clone();
        for (i, hi) in z1.iter().enumerate() {
            axpy(*hi, &self.w2[i * h..(i + 1) * h], &mut z2);
        }
        z2.iter_mut().for_each(|v| *v = v.tanh());
        let mut za = [self.b_a[0], self.b_a[1], self.b_a[2]];
        let mut v = self.b_v[0];
        for (i, hi) in z2.iter().enumerate() {
            let row = &self.w_a[i * ACT_DIM..(i + 1) * ACT_DIM];
            za[0] += hi * row[0];
            za[1] += hi * row[1];
            za[2] += hi * row[2];
            v += hi * self.w_v[i];
        }
        PolicyOutput {
            action_mean: za.map(f64::tanh),
            value: v,
            log_std: [self.log_std[0], self.log_std[1], self.log_std[2]],
        }
    }

    /// Forward pass over a batch, keeping the activations for [`Self::backward`].
    pub fn forward_batch(&self, obs: &[[f64; OBS_DIM]]) -> ForwardCache {
        let b = obs.len();
        let h = self.hidden;
        let x: Vec<f64> = obs.iter().flatten().copied().collect();

        let mut h1 = broadcast_rows(&self.b1, b);
        gemm(b, OBS_DIM, h, &x, &self.w1, &mut h1, 1.0);
        h1.iter_mut().for_each(|v| *v = v.tanh());

        let mut h2 = broadcast_rows(&self.b2, b);
        gemm(b, h, h, &h1, &self.w2, &mut h2, 1.0);
        h2.iter_mut().for_each(|v| *v = v.tanh());

        let mut mean = broadcast_rows(&self.b_a, b);
        gemm(b, h, ACT_DIM, &h2, &self.w_a, &mut mean, 1.0);
        mean.iter_mut().for_each(|v| *v = v.tanh());

        let mut value = vec![self.b_v[0]; b];
        gemm(b, h, 1, &h2, &self.w_v, &mut value, 1.0);

        ForwardCache {
            batch: b,
            hidden: h,
            x,
            h1,
            h2,
            mean,
            value,
        }
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradients with respect to the outputs of the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, g: &OutputGrads) -> Result<MlpParams, PolicyError> {
        let b = cache.batch;
        let h = self.hidden;
        if cache.hidden != h {
            return Err(PolicyError::Usage(format!(
                "activation cache is for width {}, network has {h}",
                cache.hidden
            )));
        }
        if g.mean.len() != b * ACT_DIM || g.value.len() != b {
            return Err(PolicyError::Usage(format!(
                "output gradients sized for {} rows, cache holds {b}",
                g.value.len()
            )));
        }
        let mut grads = MlpParams::zeros(h);
        grads.log_std.copy_from_slice(&g.log_std);
        if b == 0 {
            return Ok(grads);
        }

        // Action head pre-activation.
        let dza: Vec<f64> = g
            .mean
            .iter()
            .zip(&cache.mean)
            .map(|(gm, m)| gm * (1.0 - m * m))
            .collect();
        gemm_tn(h, b, ACT_DIM, &cache.h2, &dza, &mut grads.w_a);
        column_sums(&dza, ACT_DIM, &mut grads.b_a);
        gemm_tn(h, b, 1, &cache.h2, &g.value, &mut grads.w_v);
        grads.b_v[0] = g.value.iter().sum();

        let mut dh2 = vec![0.0; b * h];
        gemm_nt(b, ACT_DIM, h, &dza, &self.w_a, &mut dh2);
        gemm_nt(b, 1, h, &g.value, &self.w_v, &mut dh2);
        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&cache.h2)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        gemm_tn(h, b, h, &cache.h1, &dz2, &mut grads.w2);
        column_sums(&dz2, h, &mut grads.b2);

        let mut dh1 = vec![0.0; b * h];
        gemm_nt(b, h, h, &dz2, &self.w2, &mut dh1);
        let dz1: Vec<f64> = dh1
            .iter()
            .zip(&cache.h1)
            .map(|(d, a)| d * (1.0 - a * a))
            .collect();
        gemm_tn(OBS_DIM, b, h, &cache.x, &dz1, &mut grads.w1);
        column_sums(&dz1, h, &mut grads.b1);
        Ok(grads)
    }

    /// `self += k · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &MlpParams, k: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub action_mean: [f64; ACT_DIM],
    pub value: f64,
    pub log_std: [f64; ACT_DIM],
}

/// Activations of a batch forward pass (row-major, one row per observation).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    hidden: usize,
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    mean: Vec<f64>,
    value: Vec<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Action means, `batch × 3`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn output(&self, row: usize, log_std: &[f64]) -> PolicyOutput {
        let m = &self.mean[row * ACT_DIM..(row + 1) * ACT_DIM];
        PolicyOutput {
            action_mean: [m[0], m[1], m[2]],
            value: self.value[row],
            log_std: [log_std[0], log_std[1], log_std[2]],
        }
    }
}

/// Loss gradients with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    /// `batch × 3`, with respect to the (post-tanh) action mean.
    pub mean: Vec<f64>,
    /// `batch`, with respect to the value estimate.
    pub value: Vec<f64>,
    /// With respect to the shared log standard deviation.
    pub log_std: [f64; ACT_DIM],
}

impl OutputGrads {
    pub fn zeros(batch: usize) -> Self {
        Self {
            mean: vec![0.0; batch * ACT_DIM],
            value: vec![0.0; batch],
            log_std: [0.0; ACT_DIM],
        }
    }
}

/// An action drawn from the policy's Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Clipped action sent to the environment.
    pub action: Action,
    /// Pre-clip Gaussian sample.
    pub raw: [f64; ACT_DIM],
    /// Log density of `raw`.
    pub log_prob: f64,
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob(x: &[f64; ACT_DIM], mean: &[f64; ACT_DIM], log_std: &[f64; ACT_DIM]) -> f64 {
    (0..ACT_DIM)
        .map(|i| {
            let z = (x[i] - mean[i]) * (-log_std[i]).exp();
            -0.5 * z * z - log_std[i] - HALF_LN_2PI
        })
        .sum()
}

/// Entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64; ACT_DIM]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum()
}

pub fn sample_action<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> SampledAction {
    let mut raw = [0.0; ACT_DIM];
    for (i, r) in raw.iter_mut().enumerate() {
        let n: f64 = StandardNormal.sample(rng);
        *r = out.action_mean[i] + out.log_std[i].exp() * n;
    }
    SampledAction {
        action: Action(raw).clipped(),
        raw,
        log_prob: gaussian_log_prob(&raw, &out.action_mean, &out.log_std),
    }
}

/// `rows × cols` matrix with orthonormal columns (rows ≥ cols) or rows,
/// scaled by `gain`. Signs follow the diagonal of R so the result is a
/// deterministic function of the Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn broadcast_rows(row: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        out.extend_from_slice(row);
    }
    out
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

/// `c = a·b + beta·c`, all row-major; `a` is `m × k`, `b` is `k × n`.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    unsafe {
        dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += aᵀ·b`; `a` is `k × m`, `b` is `k × n`.
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() == k * m && b.len() == k * n && c.len() == m * n);
    unsafe {
        dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += a·bᵀ`; `a` is `m × k`, `b` is `n × k`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n);
    unsafe {
        dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}
