//! Seeded sample streams for input excitation and measurement noise.
//!
//! Every distribution is realized by an explicit bit-level algorithm on top
//! of the ChaCha20 keystream, so a given `(seed, stream)` pair produces the
//! same sequence on every platform and in every build profile. Gaussian
//! samples use the Box-Muller transform; uniform samples map the top 53 bits
//! of one keystream word onto `[0, 1)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Deterministic sample stream over a ChaCha20 keystream.
pub struct SampleStream {
    rng: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl SampleStream {
    /// Stream 0 for the given seed.
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent substream of the same seed (ChaCha stream id).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SampleStream { rng, spare_normal: None }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform draw in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform01()
    }

    /// Standard normal draw. Box-Muller pairs are consumed cosine-first;
    /// the first uniform is shifted into `(0, 1]` so the logarithm is finite.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
        let u2 = self.uniform01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Normal draw with the given mean and standard deviation.
    pub fn normal(&mut self, mean: f64, stddev: f64) -> f64 {
        mean + stddev * self.standard_normal()
    }
}
