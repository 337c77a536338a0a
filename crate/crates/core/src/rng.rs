//! Deterministic, splittable random streams.
//!
//! Every random draw in a simulation comes from a [`Stream`] identified by a
//! master seed and an ordered list of `u64` labels. The mapping is pure
//! arithmetic and platform independent:
//!
//! 1. `key = SHA-256("wla/substream/v1" || seed_le || len_le || label_0_le || ...)`
//! 2. the 32-byte key seeds a ChaCha8 block generator;
//! 3. a [`StreamKey`] can open any of its 2^64 ChaCha stream ids, which the
//!    engines use for the step index, so one step's consumption never shifts
//!    another step's draws.
//!
//! Unit reals are built from the top 53 bits of a 64-bit output. These
//! conversions are fixed here rather than delegated to a distribution crate so
//! that recorded traces do not change across dependency upgrades.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Name of the generator recorded in run manifests.
pub const GENERATOR_NAME: &str = "ChaCha8 (rand_chacha 0.9), key = SHA-256(wla/substream/v1 || seed || labels)";

const DOMAIN_TAG: &[u8] = b"wla/substream/v1";
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Purpose tags used as the second label of every engine substream.
pub mod purpose {
    pub const TOPOLOGY: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const FAULT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CLOCK_PARAMS: u64 = 5;
    pub const SKEW_NOISE: u64 = 6;
    pub const OFFSET_NOISE: u64 = 7;
}

/// A 256-bit stream key derived from a seed and a label path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN_TAG);
        hasher.update(seed.to_le_bytes());
        hasher.update((labels.len() as u64).to_le_bytes());
        for label in labels {
            hasher.update(label.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        StreamKey(key)
    }

    /// Opens stream `id` of this key, positioned at its first word.
    pub fn stream(&self, id: u64) -> Stream {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(id);
        Stream { rng }
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// Derives the stream for `(seed, labels)`; equivalent to
/// `StreamKey::derive(seed, labels).stream(0)`.
///
/// Distinct label paths give independent streams. `labels` should be nonempty;
/// an empty path is still a valid (if unlabelled) stream.
pub fn derive_substream(seed: u64, labels: &[u64]) -> Stream {
    StreamKey::derive(seed, labels).stream(0)
}

/// A sequential source of random draws. Owned by exactly one consumer.
#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn open_unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the interval is degenerate.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.unit();
        if lo == hi {
            return lo;
        }
        (lo + (hi - lo) * u).min(hi)
    }

    /// `true` with probability `p`. Always consumes one word.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_path_same_stream() {
        let mut a = derive_substream(42, &[0, purpose::NOISE, 3]);
        let mut b = derive_substream(42, &[0, purpose::NOISE, 3]);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn replica_streams_differ() {
        let mut a = derive_substream(7, &[0]);
        let mut b = derive_substream(7, &[1]);
        let equal = (0..10_000).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(equal, 0);
    }

    #[test]
    fn label_boundaries_are_not_ambiguous() {
        let a = StreamKey::derive(1, &[2, 3]);
        let b = StreamKey::derive(1, &[2]);
        let c = StreamKey::derive(2, &[3]);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_ids_are_independent_positions() {
        let key = StreamKey::derive(9, &[0, purpose::TOPOLOGY]);
        let first: Vec<u64> = {
            let mut s = key.stream(5);
            (0..8).map(|_| s.next_u64()).collect()
        };
        let mut other = key.stream(6);
        let second: Vec<u64> = (0..8).map(|_| other.next_u64()).collect();
        assert_ne!(first, second);
        let mut again = key.stream(5);
        let replay: Vec<u64> = (0..8).map(|_| again.next_u64()).collect();
        assert_eq!(first, replay);
    }

    #[test]
    fn paired_draws_are_uncorrelated() {
        let mut a = derive_substream(2024, &[0, purpose::NOISE, 1]);
        let mut b = derive_substream(2024, &[0, purpose::NOISE, 2]);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.unit()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.unit()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() < 0.01, "r = {r}");
    }

    #[test]
    fn unit_ranges() {
        let mut s = derive_substream(3, &[1]);
        for _ in 0..100_000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
            let o = s.open_unit();
            assert!(o > 0.0 && o < 1.0);
        }
        assert_eq!(s.uniform(5.0, 5.0), 5.0);
    }
}
