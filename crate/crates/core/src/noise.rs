//! Seeded Gaussian noise.
//!
//! Every consumer draws from its own named ChaCha20 stream, so adding a new
//! consumer or running sweeps in parallel never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, name: &str) -> Self {
        Self::indexed(seed, name, 0)
    }

    /// Stream `index` of the family `name`; used for per-draw substreams.
    pub fn indexed(seed: u64, name: &str, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(name) ^ index.rotate_left(32));
        Self { rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `theta + xi` with `xi ~ N(0, sigma^2 I)`.
pub fn perturb(theta: &ParamVector, sigma: f64, noise: &mut NoiseStream) -> Result<ParamVector> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::invalid(format!("noise scale must be >= 0, got {sigma}")));
    }
    if !sigma.is_finite() {
        return Err(Error::invalid("noise scale is infinite (vacuous certificate)"));
    }
    if sigma == 0.0 {
        return Ok(theta.clone());
    }
    let values = theta
        .iter()
        .map(|&t| t + sigma * noise.standard_normal())
        .collect();
    ParamVector::new(values)
}
