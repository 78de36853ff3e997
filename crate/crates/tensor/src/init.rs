//! Seeded initializers.
//!
//! Every tensor is filled from its own ChaCha8 stream seeded with the given
//! seed, in row-major order: gaussian draws use `rand_distr::StandardNormal`
//! scaled and shifted, uniform draws use `low + (high - low) * u` with `u`
//! from `[0, 1)`. The same seed gives bit-identical tensors on every platform.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Init {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Init {
    /// Gaussian with standard deviation `1 / sqrt(fan_in)`.
    pub fn fan_in(fan_in: usize) -> Init {
        Init::Gaussian {
            mean: 0.0,
            std: 1.0 / (fan_in.max(1) as f64).sqrt(),
        }
    }
}

pub fn seeded_init(shape: &[usize], init: Init, seed: u64) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut r = instenc_core::rng::rng(seed);
    let data = match init {
        Init::Gaussian { mean, std } => {
            if !(mean.is_finite() && std.is_finite() && std >= 0.0) {
                return Err(Error::Init(format!("gaussian({mean}, {std})")));
            }
            (0..n)
                .map(|_| mean + std * r.sample::<f64, _>(StandardNormal))
                .collect()
        }
        Init::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite() && low <= high) {
                return Err(Error::Init(format!("uniform({low}, {high})")));
            }
            (0..n).map(|_| low + (high - low) * r.random::<f64>()).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}
