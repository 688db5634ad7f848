//! Splittable deterministic random streams.
//!
//! Every consumer (episode, perception noise, obstacle spawner, bootstrap)
//! gets its own stream derived from `(master seed, labels...)`. Nothing
//! shares a generator, so an episode produces the same draws whether the
//! batch runs serially or on a thread pool.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recorded in every report header.
pub const RNG_ALGORITHM: &str = "splitmix64-derive/chacha8";

/// Purpose tags used as the second derivation label.
pub mod purpose {
    pub const EPISODE: u64 = 0x45_50;
    pub const PERCEPTION: u64 = 0x50_45;
    pub const SPAWN: u64 = 0x53_50;
    pub const BOOTSTRAP: u64 = 0x42_53;
    pub const START: u64 = 0x53_54;
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RangeError {
    #[error("empty range: lo {lo} > hi {hi}")]
    Inverted { lo: f64, hi: f64 },
    #[error("non-finite range bound")]
    NonFinite,
}

/// SplitMix64 finalizer. Bijective on u64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Folds labels into a 64-bit seed. For a fixed master seed and a fixed
/// prefix, the map from the last label to the output is a bijection, so
/// distinct label values can never collide.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut state = mix64(master.wrapping_add(GOLDEN));
    for (depth, &label) in labels.iter().enumerate() {
        let salt = GOLDEN.wrapping_mul(depth as u64 + 2);
        state = mix64(state.wrapping_add(salt) ^ label);
    }
    state
}

/// A labelled random stream.
#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    labels: Vec<u64>,
    rng: ChaCha8Rng,
}

impl SeededStream {
    pub fn derive(master: u64, labels: &[u64]) -> Self {
        let seed = derive_seed(master, labels);
        Self {
            seed,
            labels: labels.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream keyed by this stream's seed plus extra labels. Does not
    /// advance `self`.
    pub fn split(&self, labels: &[u64]) -> Self {
        let mut all = self.labels.clone();
        all.extend_from_slice(labels);
        let seed = derive_seed(self.seed, labels);
        Self {
            seed,
            labels: all,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`; `lo == hi` returns `lo`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64, RangeError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(RangeError::NonFinite);
        }
        if lo > hi {
            return Err(RangeError::Inverted { lo, hi });
        }
        if lo == hi {
            return Ok(lo);
        }
        let x = lo + (hi - lo) * self.unit();
        // rounding can land exactly on hi for wide ranges
        Ok(if x >= hi { next_down(hi).max(lo) } else { x })
    }

    /// Uniform symmetric draw in `[-half_width, half_width)`.
    pub fn symmetric(&mut self, half_width: f64) -> f64 {
        let w = half_width.abs();
        self.uniform(-w, w).unwrap_or(0.0)
    }

    /// Bernoulli trial.
    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.unit() < p
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: u32, hi: u32) -> u32 {
        if hi <= lo {
            return lo;
        }
        self.rng.gen_range(lo..=hi)
    }

    /// Uniform index in `0..n`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

fn next_down(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}
