//! Deterministic random streams for synthesis.
//!
//! Reproducibility across runs, platforms, and implementations matters more
//! here than raw speed: a seeded run must produce bit-identical stacks so
//! that downstream estimates and reports can be diffed. Two choices follow
//! from that.
//!
//! * The generator is ChaCha8, a portable counter-based stream cipher with a
//!   fixed published algorithm. Streams are derived per purpose from a user
//!   seed and an index via SplitMix64, so e.g. each image in a stack draws
//!   from its own independent stream regardless of evaluation order.
//! * Normal variates come from the inverse CDF applied to a 53-bit uniform,
//!   not from rejection-style samplers, so any implementation of the same
//!   quantile function agrees distribution-for-distribution and consumes one
//!   draw per variate.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::ContinuousCDF;
use statrs::distribution::Normal;

/// SplitMix64 mixing step; used to derive substream seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for substream `index` of a user-level seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index.wrapping_add(1).wrapping_mul(0xA0761D6478BD642F))
}

/// One deterministic sample stream.
pub struct SampleStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl SampleStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, index)),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        }
    }

    /// Uniform in the open interval (0, 1), from the top 53 bits of one draw.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via the inverse CDF.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform_open();
        self.normal.inverse_cdf(u)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, n)` by rejection on the top bits (unbiased).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = SampleStream::new(7, 3);
        let mut b = SampleStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_differ() {
        let mut a = SampleStream::new(7, 0);
        let mut b = SampleStream::new(7, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut s = SampleStream::new(42, 0);
        let n = 100_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.standard_normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_stays_inside_open_interval() {
        let mut s = SampleStream::new(1, 0);
        for _ in 0..10_000 {
            let u = s.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn quantile_hits_known_points() {
        let mut s = SampleStream::new(0, 0);
        // Exercise the sampler once so construction cost is covered, then
        // check the quantile function against textbook values.
        let _ = s.standard_normal();
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!((n.inverse_cdf(0.5)).abs() < 1e-12);
        assert!((n.inverse_cdf(0.975) - 1.959963984540054).abs() < 1e-6);
        assert!((n.inverse_cdf(0.841344746068543) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn below_is_in_range() {
        let mut s = SampleStream::new(9, 9);
        for _ in 0..1000 {
            assert!(s.below(7) < 7);
        }
    }
}
