//! Deterministic random streams.
//!
//! [`Prng`] wraps ChaCha8 (256-bit key). A 64-bit seed is expanded into the
//! key with `rand_core`'s PCG32-based `seed_from_u64`, so identical seeds
//! produce identical streams on every platform. Independent workers obtain
//! their own generator through [`Prng::split`], which keeps the key and
//! selects a distinct ChaCha stream id.
//!
//! Gaussian samples use the Box–Muller transform on two uniforms from
//! `(0, 1]`; both outputs of each transform are consumed in order.

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{CoreError, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Prng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Child generator for worker / purpose `index`. Children of the same
    /// parent seed never share a stream with each other or with the parent
    /// (the parent uses stream 0).
    pub fn split(&self, index: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(self.inner.get_seed());
        inner.set_stream(index.wrapping_add(1));
        Self { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's widening multiply; bias is < 2^-64 * n, irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Array of i.i.d. standard normal entries in row-major order.
pub fn gaussian_noise<T: Real>(shape: &[usize], rng: &mut Prng) -> Result<ArrayD<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(CoreError::InvalidArgument(format!(
            "noise shape must be non-empty with positive dims, got {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::lit(rng.standard_normal())).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(shape), data).expect("length matches shape"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let x: ArrayD<f32> = gaussian_noise(&[3, 4], &mut Prng::new(7)).unwrap();
        let y: ArrayD<f32> = gaussian_noise(&[3, 4], &mut Prng::new(7)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn split_streams_differ() {
        let root = Prng::new(1);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let mut c = Prng::new(1);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_eq!(root.split(0).next_u64(), x);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Prng::new(2024);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for _ in 0..n {
            let z = rng.standard_normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn empty_shape_rejected() {
        let mut rng = Prng::new(0);
        assert!(gaussian_noise::<f64>(&[], &mut rng).is_err());
        assert!(gaussian_noise::<f64>(&[2, 0], &mut rng).is_err());
    }

    #[test]
    fn below_in_range() {
        let mut rng = Prng::new(3);
        for _ in 0..1000 {
            assert!(rng.below(7) < 7);
        }
    }
}
