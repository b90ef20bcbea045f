//! Seeded random streams used throughout the simulator.
//!
//! Every stochastic quantity is drawn from a ChaCha8 stream seeded with
//! `seed_from_u64(seed)` and selected with `set_stream(stream)`. Gaussian
//! variates use the cosine branch of Box-Muller on two uniforms built from the
//! top 53 bits of consecutive `next_u64` outputs:
//!
//! ```text
//! u  = ((x >> 11) + 1) * 2^-53          in (0, 1]
//! z  = sqrt(-2 ln u1) * cos(2 pi u2)
//! ```
//!
//! The sine branch is discarded, so every normal consumes exactly two words.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent random sources of a world.
pub mod streams {
    pub const MOTION: u64 = 1;
    pub const LATENCY: u64 = 2;
    pub const DATASET: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INIT: u64 = 5;
}

/// Build the ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gaussian noise source with the documented uniform and Box-Muller mapping.
#[derive(Debug, Clone)]
pub struct NoiseRng {
    inner: ChaCha8Rng,
}

impl NoiseRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            inner: stream_rng(seed, stream),
        }
    }

    /// Uniform variate in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Normal variate with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }
}
