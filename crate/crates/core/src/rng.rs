//! Seeded random number generation.
//!
//! Backed by ChaCha8, a counter-based stream cipher generator, so a seed
//! reproduces the same stream on every platform. Independent streams for
//! epochs, batches and folds are obtained with [`Rng::derive`] rather than
//! by sharing one generator.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to mix seed components.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a base seed with stream coordinates (epoch, batch, ...).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for the sub-stream addressed by `parts`. Does not
    /// advance `self`.
    pub fn derive(&self, parts: &[u64]) -> Rng {
        Rng::new(derive_seed(self.seed, parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draws on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Matrix> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "uniform interval [{lo}, {hi}) is empty or unbounded"
            )));
        }
        let dist = Uniform::new(lo, hi)
            .map_err(|e| Error::InvalidArgument(format!("uniform [{lo}, {hi}): {e}")))?;
        let data = (0..rows * cols)
            .map(|_| dist.sample(&mut self.inner))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// I.i.d. normal draws. `stddev == 0` yields a constant matrix.
    pub fn gaussian(&mut self, mean: f64, stddev: f64, rows: usize, cols: usize) -> Result<Matrix> {
        if stddev < 0.0 || !stddev.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gaussian needs a finite mean and stddev >= 0, got N({mean}, {stddev}^2)"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.inner);
                mean + stddev * z
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rejects_degenerate_interval() {
        let mut rng = Rng::new(1);
        assert!(rng.uniform(0.5, 0.5, 1, 1).is_err());
        assert!(rng.uniform(1.0, 0.0, 1, 1).is_err());
    }

    #[test]
    fn uniform_mean_and_bounds() {
        let mut rng = Rng::new(2);
        let m = rng.uniform(-0.5, 0.5, 100, 100).unwrap();
        assert!(m.as_slice().iter().all(|&v| (-0.5..0.5).contains(&v)));
        let mean = m.sum() / m.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn same_seed_same_draws() {
        let a = Rng::new(42).uniform(0.0, 1.0, 3, 4).unwrap();
        let b = Rng::new(42).uniform(0.0, 1.0, 3, 4).unwrap();
        assert_eq!(a, b);
        let c = Rng::new(42).gaussian(0.0, 1.0, 3, 4).unwrap();
        let d = Rng::new(42).gaussian(0.0, 1.0, 3, 4).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn gaussian_zero_stddev_is_constant() {
        let m = Rng::new(3).gaussian(3.0, 0.0, 4, 5).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 3.0));
        assert!(Rng::new(3).gaussian(0.0, -1.0, 1, 1).is_err());
    }

    #[test]
    fn gaussian_sample_variance() {
        let m = Rng::new(4).gaussian(0.0, 1.0, 1000, 100).unwrap();
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn derived_streams_are_independent_of_parent_state() {
        let mut parent = Rng::new(9);
        let before = parent.derive(&[1, 2]).next_u64();
        parent.next_u64();
        assert_eq!(before, parent.derive(&[1, 2]).next_u64());
        assert_ne!(before, parent.derive(&[2, 1]).next_u64());
    }
}
