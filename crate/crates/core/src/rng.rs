//! Seeded random streams.
//!
//! Each node draws from its own ChaCha12 stream selected by `(seed,
//! stream id)`, so adding a node to a scenario never shifts the draws of
//! the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::time::Duration;

/// Stream id reserved for scenario-level draws.
pub const SCENARIO_STREAM: u64 = 0;

pub const ALGORITHM: &str = "chacha12";

#[derive(Debug, Clone)]
pub struct RngStream {
    id: u64,
    seed: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(id);
        RngStream { id, seed, rng }
    }

    /// Stream for node index `index` (the scenario stream is id 0).
    pub fn for_node(seed: u64, index: usize) -> Self {
        Self::new(seed, index as u64 + 1)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform integer microseconds on the closed range `[lo, hi]`.
    ///
    /// # Panics
    /// If `lo > hi`.
    pub fn uniform_us(&mut self, lo: Duration, hi: Duration) -> Duration {
        assert!(lo <= hi, "uniform_us: lo {lo} > hi {hi}");
        Duration::from_us(self.rng.random_range(lo.as_us()..=hi.as_us()))
    }

    /// Access to the underlying generator for distribution sampling.
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_range() {
        let mut s = RngStream::new(1, 1);
        for _ in 0..100 {
            assert_eq!(s.uniform_us(Duration::ZERO, Duration::ZERO), Duration::ZERO);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        for _ in 0..1000 {
            let hi = Duration::from_us(5_000);
            assert_eq!(a.uniform_us(Duration::ZERO, hi), b.uniform_us(Duration::ZERO, hi));
        }
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let hi = Duration::from_us(5_000);
        let mut s1 = RngStream::new(9, 1);
        let first: Vec<_> = (0..20).map(|_| s1.uniform_us(Duration::ZERO, hi)).collect();
        // Interleave draws from another stream; stream 1 must be unaffected.
        let mut s1b = RngStream::new(9, 1);
        let mut s2 = RngStream::new(9, 2);
        let mut again = Vec::new();
        for _ in 0..20 {
            s2.uniform_us(Duration::ZERO, hi);
            again.push(s1b.uniform_us(Duration::ZERO, hi));
        }
        assert_eq!(first, again);
        let other: Vec<_> = (0..20)
            .map(|_| RngStream::new(9, 2).uniform_us(Duration::ZERO, hi))
            .collect();
        assert_ne!(first, other);
    }

    #[test]
    #[should_panic]
    fn inverted_range_panics() {
        RngStream::new(0, 0).uniform_us(Duration::from_us(2), Duration::from_us(1));
    }
}
