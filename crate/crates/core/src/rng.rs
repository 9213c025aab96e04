//! Seeded random stream shared by the engine and the generators.
//!
//! The generator is ChaCha8, so a seed produces the same stream on every
//! platform. Callers draw in canonical scan order; see [`crate::engine`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fair coin.
    pub fn coin(&mut self) -> bool {
        self.inner.random::<bool>()
    }

    /// `true` with probability `prob`. Consumes no draw when `prob` is 0 or 1.
    pub fn bernoulli(&mut self, prob: f64) -> bool {
        if prob <= 0.0 {
            false
        } else if prob >= 1.0 {
            true
        } else {
            self.inner.random::<f64>() < prob
        }
    }

    /// Uniform index in `[0, len)`. `len` must be positive.
    pub fn index(&mut self, len: usize) -> usize {
        self.inner.random_range(0..len)
    }

    /// Uniform pick from a slice; `None` when empty. A single candidate
    /// consumes no draw.
    pub fn pick<T: Copy>(&mut self, items: &[T]) -> Option<T> {
        match items.len() {
            0 => None,
            1 => Some(items[0]),
            len => Some(items[self.index(len)]),
        }
    }

    /// Fisher-Yates sample of `count` distinct values from `pool`, in draw order.
    pub fn sample_distinct(&mut self, pool: &mut [usize], count: usize) -> Vec<usize> {
        let count = count.min(pool.len());
        for i in 0..count {
            let j = i + self.index(pool.len() - i);
            pool.swap(i, j);
        }
        pool[..count].to_vec()
    }
}
