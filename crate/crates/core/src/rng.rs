//! Deterministic, splittable random streams.
//!
//! Backed by ChaCha8, which is counter-based: a `(seed, stream)` pair names an
//! independent keystream, so data shuffling and weight initialisation never
//! share state.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::tensor::{Scalar, Tensor};

/// Well-known stream ids.
pub mod streams {
    pub const WEIGHTS: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DATA: u64 = 3;
    pub const AUX: u64 = 4;
    pub const PROBE: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
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

    /// Independent child stream. Splitting is a pure function of
    /// `(seed, stream, id)` and does not advance `self`.
    pub fn split(&self, id: u64) -> Self {
        Self::with_stream(self.seed, splitmix64(self.stream ^ splitmix64(id)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift with rejection.
        let n = n as u64;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low >= n || low >= n.wrapping_neg() % n {
                return (m >> 64) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    pub fn normal_tensor<F: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<F> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::from_f64(self.normal() * std)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    pub fn uniform_tensor<F: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<F> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64(lo + (hi - lo) * self.uniform()))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
