//! Deterministic randomness: seeded substreams and counter-based noise.
//!
//! The counter-based stream maps an integer key directly to a Gaussian
//! draw, so the same (seed, step, chain, position, dimension) always
//! yields the same noise regardless of evaluation order, batching, or
//! which other coordinates are being simulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: bijective 64-bit mix with good avalanche.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Combine a seed with stream indices into one well-mixed 64-bit key.
pub fn mix_key(seed: u64, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &ix in indices {
        h = splitmix64(h ^ ix.wrapping_mul(0x9e3779b97f4a7c15));
    }
    h
}

/// Independent seeded substream for a cell of a larger computation.
pub fn substream(seed: u64, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(seed, indices))
}

/// Uniform in (0, 1), strictly inside the open interval.
#[inline]
fn u64_to_open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Counter-based noise source keyed on a base seed.
#[derive(Clone, Copy, Debug)]
pub struct CounterNoise {
    seed: u64,
}

impl CounterNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Uniform (0,1) draw for a key.
    pub fn uniform(&self, indices: &[u64]) -> f64 {
        u64_to_open_unit(mix_key(self.seed, indices))
    }

    /// Standard normal draw for a key, via Box–Muller on two derived uniforms.
    pub fn normal(&self, indices: &[u64]) -> f64 {
        let h = mix_key(self.seed, indices);
        let u1 = u64_to_open_unit(h);
        let u2 = u64_to_open_unit(splitmix64(h));
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
