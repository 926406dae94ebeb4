//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (the `rand_chacha`
//! implementation, a counter-based stream cipher) keyed by
//! `seed_from_u64(seed)` and split into independent purposes with
//! `set_stream`. Conversions are fixed so that another implementation of
//! ChaCha8 reproduces the same values:
//!
//! * uniform in `[0, 1)`: `(next_u64 >> 11) * 2^-53`
//! * standard normal: Box-Muller on two uniforms, `u1` mapped to `(0, 1]`
//!   as `1 - u`, using only the cosine branch (one normal per two uniforms)
//! * index in `0..n`: `next_u64 % n` with rejection above the largest multiple of `n`

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Named sub-streams so unrelated consumers never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    TrainNoise = 2,
    ModelInit = 3,
    Batching = 4,
    Rotation = 5,
    Bias = 6,
    /// Test domains use `TestNoise as u64 + domain_index`.
    TestNoise = 1000,
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        Self::new(seed, stream as u64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates, back to front.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
