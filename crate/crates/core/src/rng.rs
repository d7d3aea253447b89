//! Counter-based random streams: one ChaCha8 stream per path, so path `i`
//! sees the same numbers whatever thread simulates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Source of independent standard normal increments.
pub trait NoiseSource {
    fn fill(&mut self, out: &mut [f64]);
}

pub struct GaussianNoise {
    rng: ChaCha8Rng,
    sign: f64,
}

impl GaussianNoise {
    pub fn new(seed: u64, stream: u64) -> Self {
        GaussianNoise {
            rng: path_rng(seed, stream),
            sign: 1.0,
        }
    }

    /// The antithetic twin of `new(seed, stream)`.
    pub fn antithetic(seed: u64, stream: u64) -> Self {
        GaussianNoise {
            rng: path_rng(seed, stream),
            sign: -1.0,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.rng.random::<f64>()
    }
}

impl NoiseSource for GaussianNoise {
    fn fill(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut self.rng);
            *z = self.sign * v;
        }
    }
}

/// Deterministic paths (all increments zero).
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}
