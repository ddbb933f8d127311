//! Single-observation inference latency.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalError, Summary};
use crate::policy::{MlpParams, MlpParams32, OBS_DIM};

pub const MIN_BENCH_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "64")]
    F64,
    #[serde(rename = "32")]
    F32,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F64 => 64,
            Precision::F32 => 32,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            64 => Some(Precision::F64),
            32 => Some(Precision::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub precision: Precision,
    pub iterations: usize,
    pub mean_us: f64,
    pub std_us: f64,
}

/// Times `iterations` forward passes on single observations after a warm-up
/// of the same length, which is not recorded.
pub fn latency_bench(params: &MlpParams, iterations: usize, precision: Precision) -> Result<LatencyStats, EvalError> {
    if iterations < MIN_BENCH_ITERATIONS {
        return Err(EvalError::Config(format!(
            "at least {MIN_BENCH_ITERATIONS} iterations required, got {iterations}"
        )));
    }
    params.validate()?;
    // Inputs vary so that no pass can be hoisted out of the loop.
    let input = |i: usize| {
        let mut x = [0.0; OBS_DIM];
        for (k, v) in x.iter_mut().enumerate() {
            *v = (((i * 7 + k) % 13) as f64 - 6.0) / 6.0;
        }
        x
    };
    let mut samples = Vec::with_capacity(iterations);
    match precision {
        Precision::F64 => {
            let run = |i: usize| {
                let x = black_box(input(i));
                let t = Instant::now();
                black_box(params.forward_array(&x));
                t.elapsed()
            };
            (0..iterations).for_each(|i| {
                run(i);
            });
            samples.extend((0..iterations).map(|i| run(i).as_secs_f64() * 1e6));
        }
        Precision::F32 => {
            let p32 = MlpParams32::from(params);
            let run = |i: usize| {
                let x = black_box(input(i).map(|v| v as f32));
                let t = Instant::now();
                black_box(p32.forward_array(&x));
                t.elapsed()
            };
            (0..iterations).for_each(|i| {
                run(i);
            });
            samples.extend((0..iterations).map(|i| run(i).as_secs_f64() * 1e6));
        }
    }
    let s = Summary::of(&samples).expect("non-empty");
    Ok(LatencyStats {
        precision,
        iterations,
        mean_us: s.mean,
        std_us: s.std,
    })
}
