//! Seeded randomness.
//!
//! Two kinds of generator are used. Sequential decisions (shuffles, weight
//! init, negative labels) draw from a [`ChaCha8Rng`] seeded per purpose.
//! Stochastic rounding draws from a [`NoiseStream`], a counter-based
//! generator where every element's uniform variate is a pure function of
//! `(seed, stream key, element index)`, so quantization results do not
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed, splittable stream of uniform variates indexed by element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    /// Child stream for a sub-purpose. Distinct tags give independent streams.
    pub fn derive(self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_add(GOLDEN))),
        }
    }

    pub fn key(self) -> u64 {
        self.key
    }

    /// Uniform variate in `[0, 1)` with 24 bits of resolution.
    #[inline]
    pub fn uniform(self, index: u64) -> f32 {
        let h = mix64(self.key ^ index.wrapping_mul(GOLDEN));
        (h >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }
}

/// Deterministic sequential generator for a `(seed, purpose)` pair.
pub fn seeded_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(purpose.wrapping_add(GOLDEN))))
}
