//! Seeded, stream-splittable randomness.
//!
//! Backed by ChaCha20 (`rand_chacha`): the 64-bit seed is expanded to the
//! 256-bit key with `SeedableRng::seed_from_u64` (PCG32 expansion), and the
//! stream id selects ChaCha's 64-bit stream/nonce word. Distinct stream ids give
//! independent keystreams under the same key. Standard normal variates use the
//! ziggurat sampler from `rand_distr` 0.5 (`StandardNormal`). Golden vectors in
//! the tests depend on both choices.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::field::Field;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh generator on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Poisson count with mean `lambda > 0`.
    pub fn poisson(&mut self, lambda: f64) -> f64 {
        Poisson::new(lambda)
            .expect("poisson mean must be positive and finite")
            .sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// I.i.d. standard normal entries.
pub fn randn(shape: &[usize], rng: &mut Rng) -> Field {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.normal()).collect();
    Field::new(shape.to_vec(), data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_shape_gives_empty_field() {
        let mut rng = Rng::new(1, 0);
        let f = randn(&[0], &mut rng);
        assert!(f.is_empty());
        assert_eq!(f.shape(), &[0]);
    }

    #[test]
    fn same_seed_and_stream_is_bit_identical() {
        let a = randn(&[4], &mut Rng::new(1, 0));
        let b = randn(&[4], &mut Rng::new(1, 0));
        let bits = |f: &Field| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn golden_vector() {
        // Pins the generator + ziggurat combination. Regenerate only on a
        // deliberate change of RNG backend.
        let f = randn(&[4], &mut Rng::new(1, 0));
        let golden = golden_values();
        for (v, g) in f.data().iter().zip(golden) {
            assert_eq!(v.to_bits(), g.to_bits(), "{v} vs {g}");
        }
    }

    fn golden_values() -> [f64; 4] {
        GOLDEN
    }

    const GOLDEN: [f64; 4] = [
        0.3230998759408632,
        -0.7291044436784668,
        0.19103648194410427,
        -0.17576743260538324,
    ];

    #[test]
    fn streams_differ() {
        let a = randn(&[8], &mut Rng::new(1, 0));
        let b = randn(&[8], &mut Rng::new(1, 1));
        assert_ne!(a, b);
    }

    #[test]
    fn moments_of_a_million_draws() {
        // 3-sigma bounds: mean SE = 1e-3, variance SE = sqrt(2)*1e-3.
        let n = 1_000_000;
        let mut rng = Rng::new(2024, 0);
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.003, "mean {mean}");
        assert!((0.995..=1.005).contains(&var), "var {var}");
    }
}
