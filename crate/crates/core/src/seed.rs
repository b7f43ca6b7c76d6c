//! Seed derivation and the deterministic random source.
//!
//! Every random quantity comes from one top-level seed. Sub-seeds are derived
//! with [`derive_seed`], which is stable across releases: it only uses the
//! SplitMix64 finalizer and FNV-1a over the label bytes.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, 64 bit.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// `mix64(mix64(seed ^ fnv1a(label)) ^ index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(mix64(seed ^ fnv1a(label.as_bytes())) ^ index)
}

/// ChaCha8 stream with a couple of convenience draws.
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn symmetric<T: Scalar>(&mut self, bound: f64) -> T {
        T::lit((2.0 * self.unit() - 1.0) * bound)
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize % n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: changing them breaks reproducibility of old runs.
        assert_eq!(mix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(derive_seed(7, "imp_global", 0), derive_seed(7, "imp_global", 0));
        assert_ne!(derive_seed(7, "imp_global", 0), derive_seed(7, "imp_global", 1));
        assert_ne!(derive_seed(7, "imp_global", 0), derive_seed(7, "train_full", 0));
        assert_ne!(derive_seed(7, "imp_global", 0), derive_seed(8, "imp_global", 0));
    }

    #[test]
    fn draws_stay_in_range() {
        let mut rng = SeededRng::new(3);
        for _ in 0..1000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
            let s: f64 = rng.symmetric(0.25);
            assert!((-0.25..0.25).contains(&s));
            assert!(rng.below(7) < 7);
        }
    }
}
