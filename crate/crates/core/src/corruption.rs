//! Additive Gaussian corruption for the denoising objectives.
//!
//! `X~ = X + D` with `D_ij ~ N(0, (scale * delta_j)^2)`. In the isotropic
//! (default) mode every feature shares the pooled standard deviation
//! `delta = sqrt(mean_j var_j)`; otherwise `delta_j` is feature `j`'s own
//! standard deviation. Both are measured once, on training data.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    /// Multiplier on the data standard deviation.
    pub delta_scale: f64,
    pub per_feature: bool,
}

impl CorruptionSpec {
    pub fn isotropic(delta_scale: f64) -> Self {
        CorruptionSpec {
            delta_scale,
            per_feature: false,
        }
    }
}

/// Noise standard deviations fitted to a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruptor {
    sigma: Vec<f64>,
}

/// Population standard deviation of each column.
pub fn column_stddevs(x: &Matrix) -> Vec<f64> {
    let n = x.rows() as f64;
    if x.rows() == 0 {
        return vec![0.0; x.cols()];
    }
    // A constant column has spread exactly 0, despite any rounding in its mean.
    let constant: Vec<bool> = (0..x.cols())
        .map(|j| (1..x.rows()).all(|r| x.get(r, j) == x.get(0, j)))
        .collect();
    let means: Vec<f64> = x.column_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((v, &xi), mu) in var.iter_mut().zip(x.row(r)).zip(&means) {
            *v += (xi - mu) * (xi - mu);
        }
    }
    var.into_iter()
        .zip(constant)
        .map(|(v, c)| if c { 0.0 } else { (v / n).sqrt() })
        .collect()
}

impl Corruptor {
    pub fn fit(spec: CorruptionSpec, train: &Matrix) -> Result<Self> {
        if spec.delta_scale < 0.0 || !spec.delta_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "corruption scale must be >= 0, got {}",
                spec.delta_scale
            )));
        }
        let per_col = column_stddevs(train);
        let sigma = if spec.per_feature {
            per_col.iter().map(|s| spec.delta_scale * s).collect()
        } else {
            let m = per_col.len().max(1) as f64;
            let pooled = (per_col.iter().map(|s| s * s).sum::<f64>() / m).sqrt();
            vec![spec.delta_scale * pooled; per_col.len()]
        };
        Ok(Corruptor { sigma })
    }

    /// Noise standard deviation applied to each feature.
    pub fn stddevs(&self) -> &[f64] {
        &self.sigma
    }

    pub fn corrupt(&self, x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        if x.cols() != self.sigma.len() {
            return Err(Error::DimensionMismatch {
                op: "corrupt",
                left: x.shape(),
                right: (x.rows(), self.sigma.len()),
            });
        }
        let mut out = x.clone();
        if self.sigma.iter().all(|&s| s == 0.0) {
            return Ok(out);
        }
        for r in 0..out.rows() {
            for (v, &s) in out.row_mut(r).iter_mut().zip(&self.sigma) {
                let z = rng.standard_normal();
                if s != 0.0 {
                    *v += s * z;
                }
            }
        }
        Ok(out)
    }
}

/// Corrupts `x` with noise scaled to `x`'s own spread.
pub fn corrupt(x: &Matrix, spec: CorruptionSpec, rng: &mut Rng) -> Result<Matrix> {
    Corruptor::fit(spec, x)?.corrupt(x, rng)
}
