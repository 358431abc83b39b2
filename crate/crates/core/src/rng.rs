//! Counter-based random streams for reproducible parallel Monte Carlo.
//!
//! Every sample path owns an independent ChaCha8 stream selected by
//! `(seed, path_index)`: the seed is the key and the path index is the
//! ChaCha stream id, so the draws of path `i` never depend on which worker
//! produced them or on how many other paths were simulated before it.
//! Within a path the draws are consumed in step order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random stream of a single sample path.
#[derive(Debug, Clone)]
pub struct PathRng {
    inner: ChaCha8Rng,
    negate: bool,
}

impl PathRng {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(path_index);
        Self {
            inner,
            negate: false,
        }
    }

    /// Same stream, but every Gaussian draw has its sign flipped.
    ///
    /// Uniform draws are left untouched so that the antithetic partner of a
    /// path sees the same acceptance decisions for identical states.
    pub fn antithetic(seed: u64, path_index: u64) -> Self {
        Self {
            negate: true,
            ..Self::new(seed, path_index)
        }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        if self.negate {
            -z
        } else {
            z
        }
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Derives an independent sub-seed, e.g. one per time node of a quadrature.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
