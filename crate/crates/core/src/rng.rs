//! Explicit-state random number generation.
//!
//! Every run owns its own [`RngState`]; there is no global generator. The
//! stream is ChaCha8, which is portable and fully determined by the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, e.g. one per environment or per data order.
    ///
    /// Children depend only on the parent's seed and `stream`, never on how
    /// many draws the parent has made.
    pub fn derive(&self, stream: u64) -> RngState {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        RngState {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        let u: f64 = self.inner.random();
        u < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_give_identical_streams() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let xs: Vec<f64> = (0..100).map(|_| a.uniform(-1.0, 1.0)).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.uniform(-1.0, 1.0)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn known_first_draws_are_stable() {
        // Pinned so a dependency bump that changes the stream is caught.
        let mut r = RngState::new(0);
        let first = r.next_u64();
        assert_eq!(first, 13080132717333068652);
        assert_ne!(RngState::new(1).next_u64(), first);
    }

    #[test]
    fn derived_streams_are_independent_of_parent_position() {
        let parent = RngState::new(9);
        let mut advanced = parent.clone();
        for _ in 0..17 {
            advanced.next_u64();
        }
        assert_eq!(parent.derive(3).next_u64(), advanced.derive(3).next_u64());
        assert_ne!(parent.derive(3).next_u64(), parent.derive(4).next_u64());
    }

    #[test]
    fn uniform_respects_bounds() {
        let mut r = RngState::new(5);
        for _ in 0..10_000 {
            let v = r.uniform(-0.5, 2.0);
            assert!((-0.5..2.0).contains(&v));
        }
    }
}
