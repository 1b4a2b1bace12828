//! Training objectives of the relational autoencoder family.
//!
//! Every loss here is a sum over the batch, never a mean. The relational
//! term compares rectified Gram matrices of the input and the
//! reconstruction, `|| tau_t(X X^T) - tau_t(X' X'^T) ||^2`, computed over the
//! current batch only.
//!
//! Variational kinds use the Gaussian-prior evidence bound: reconstruction
//! error plus the closed-form `KL(N(mu, sigma^2) || N(0, 1))` summed over
//! latent dimensions. The relational variational kind treats the rectified
//! Gram matrix as a second reconstruction target decoded from the same
//! latent code, so both halves share one KL term:
//! `(1 - a) (rec + KL) + a (rel + KL) = (1 - a) rec + a rel + KL`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Network;

/// Probabilities are clamped into `[CE_CLAMP, 1 - CE_CLAMP]` before taking
/// logs; the loss is flat (zero gradient) outside that band.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Bae,
    Gae,
    Rae,
    Sae,
    Rsae,
    Dae,
    Rdae,
    Vae,
    Rvae,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 9] = [
        ObjectiveKind::Rae,
        ObjectiveKind::Bae,
        ObjectiveKind::Gae,
        ObjectiveKind::Rsae,
        ObjectiveKind::Sae,
        ObjectiveKind::Rdae,
        ObjectiveKind::Dae,
        ObjectiveKind::Rvae,
        ObjectiveKind::Vae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Bae => "BAE",
            ObjectiveKind::Gae => "GAE",
            ObjectiveKind::Rae => "RAE",
            ObjectiveKind::Sae => "SAE",
            ObjectiveKind::Rsae => "RSAE",
            ObjectiveKind::Dae => "DAE",
            ObjectiveKind::Rdae => "RDAE",
            ObjectiveKind::Vae => "VAE",
            ObjectiveKind::Rvae => "RVAE",
        }
    }

    pub fn is_relational(self) -> bool {
        matches!(
            self,
            ObjectiveKind::Rae | ObjectiveKind::Rsae | ObjectiveKind::Rdae | ObjectiveKind::Rvae
        )
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, ObjectiveKind::Sae | ObjectiveKind::Rsae)
    }

    pub fn is_denoising(self) -> bool {
        matches!(self, ObjectiveKind::Dae | ObjectiveKind::Rdae)
    }

    pub fn is_variational(self) -> bool {
        matches!(self, ObjectiveKind::Vae | ObjectiveKind::Rvae)
    }

    /// Whether `alpha` changes the objective.
    pub fn uses_alpha(self) -> bool {
        self.is_relational() || self == ObjectiveKind::Sae
    }

    /// The non-relational kind a relational kind extends.
    pub fn plain_counterpart(self) -> ObjectiveKind {
        match self {
            ObjectiveKind::Rae => ObjectiveKind::Bae,
            ObjectiveKind::Rsae => ObjectiveKind::Sae,
            ObjectiveKind::Rdae => ObjectiveKind::Dae,
            ObjectiveKind::Rvae => ObjectiveKind::Vae,
            other => other,
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown objective kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstruction {
    SquaredError,
    CrossEntropy,
}

impl FromStr for Reconstruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_error" => Ok(Reconstruction::SquaredError),
            "cross_entropy" => Ok(Reconstruction::CrossEntropy),
            _ => Err(Error::InvalidArgument(format!(
                "unknown reconstruction loss `{s}` (expected squared_error or cross_entropy)"
            ))),
        }
    }
}

impl fmt::Display for Reconstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reconstruction::SquaredError => "squared_error",
            Reconstruction::CrossEntropy => "cross_entropy",
        })
    }
}

/// Which Gram matrix the relational denoising term compares against
/// `tau_t(X X^T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoisingRelation {
    /// The reconstruction decoded from the corrupted input.
    Reconstruction,
    /// The corrupted input itself. The term is then constant in the
    /// parameters and only rescales the denoising loss.
    CorruptedInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub alpha: f64,
    /// Rectifier threshold: Gram entries below `t` are zeroed.
    pub t: f64,
    /// Weight-decay strength.
    pub lambda: f64,
    /// Corruption noise scale, in units of the data's standard deviation.
    pub delta: f64,
    pub recon: Reconstruction,
    pub denoising_relation: DenoisingRelation,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveSpec {
            kind,
            alpha: 0.0,
            t: 0.0,
            lambda: 0.0,
            delta: 0.0,
            recon: Reconstruction::SquaredError,
            denoising_relation: DenoisingRelation::Reconstruction,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_recon(mut self, recon: Reconstruction) -> Self {
        self.recon = recon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("`{name}` out of range: {v}")))
            }
        };
        check("alpha", self.alpha, (0.0..=1.0).contains(&self.alpha))?;
        check("t", self.t, self.t >= 0.0)?;
        check("lambda", self.lambda, self.lambda >= 0.0)?;
        check("delta", self.delta, self.delta >= 0.0)
    }

    /// Coefficients applied to each stored loss component.
    pub fn weights(&self) -> TermWeights {
        let a = self.alpha;
        let (data, relation) = match self.kind {
            ObjectiveKind::Bae | ObjectiveKind::Gae | ObjectiveKind::Dae | ObjectiveKind::Vae => {
                (1.0, 0.0)
            }
            ObjectiveKind::Sae => (a, 0.0),
            ObjectiveKind::Rae | ObjectiveKind::Rsae | ObjectiveKind::Rdae | ObjectiveKind::Rvae => {
                (1.0 - a, a)
            }
        };
        TermWeights {
            data,
            relation,
            regularizer: if self.kind.is_sparse() { self.lambda } else { 0.0 },
            kl: if self.kind.is_variational() { 1.0 } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub data: f64,
    pub relation: f64,
    pub regularizer: f64,
    pub kl: f64,
}

/// A loss split into its components. `total` is the weighted sum given by
/// [`ObjectiveSpec::weights`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub data_term: f64,
    pub relation_term: f64,
    pub regularizer_term: f64,
    pub kl_term: f64,
}

impl LossValue {
    fn assemble(
        spec: &ObjectiveSpec,
        data_term: f64,
        relation_term: f64,
        regularizer_term: f64,
        kl_term: f64,
    ) -> Self {
        let mut v = LossValue {
            total: 0.0,
            data_term,
            relation_term,
            regularizer_term,
            kl_term,
        };
        v.total = v.reassemble(spec);
        v
    }

    pub fn reassemble(&self, spec: &ObjectiveSpec) -> f64 {
        let w = spec.weights();
        let mut total = w.data * self.data_term;
        if w.relation != 0.0 {
            total += w.relation * self.relation_term;
        }
        if w.regularizer != 0.0 {
            total += w.regularizer * self.regularizer_term;
        }
        if w.kl != 0.0 {
            total += w.kl * self.kl_term;
        }
        total
    }

    /// Component-wise sum, used to accumulate batch losses over an epoch.
    pub fn accumulate(&mut self, other: &LossValue) {
        self.total += other.total;
        self.data_term += other.data_term;
        self.relation_term += other.relation_term;
        self.regularizer_term += other.regularizer_term;
        self.kl_term += other.kl_term;
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.data_term,
            self.relation_term,
            self.regularizer_term,
            self.kl_term,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn same_shape(a: &Matrix, b: &Matrix, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `sum_i ||x_i - x'_i||^2`.
pub fn squared_error(x: &Matrix, xr: &Matrix) -> Result<f64> {
    same_shape(x, xr, "squared_error")?;
    Ok(x.as_slice()
        .iter()
        .zip(xr.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `-sum [x log y + (1 - x) log(1 - y)]` with `y` clamped away from 0 and 1.
pub fn cross_entropy(x: &Matrix, y: &Matrix) -> Result<f64> {
    same_shape(x, y, "cross_entropy")?;
    check_unit_interval(x, "cross_entropy target")?;
    check_unit_interval(y, "cross_entropy prediction")?;
    Ok(x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&t, &p)| {
            let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum())
}

fn check_unit_interval(m: &Matrix, what: &str) -> Result<()> {
    match m.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::InvalidArgument(format!(
            "{what} must lie in [0, 1], found {v}"
        ))),
        None => Ok(()),
    }
}

pub fn reconstruction_loss(kind: Reconstruction, x: &Matrix, xr: &Matrix) -> Result<f64> {
    match kind {
        Reconstruction::SquaredError => squared_error(x, xr),
        Reconstruction::CrossEntropy => cross_entropy(x, xr),
    }
}

/// Derivative of [`reconstruction_loss`] with respect to the reconstruction.
pub fn reconstruction_grad(kind: Reconstruction, x: &Matrix, xr: &Matrix) -> Result<Matrix> {
    match kind {
        Reconstruction::SquaredError => x.zip_map(xr, |t, p| 2.0 * (p - t)),
        Reconstruction::CrossEntropy => x.zip_map(xr, |t, p| {
            if !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&p) {
                0.0
            } else {
                -t / p + (1.0 - t) / (1.0 - p)
            }
        }),
    }
}

/// Inner-product similarity between samples: `X X^T`.
pub fn gram(x: &Matrix) -> Matrix {
    x.matmul_t(x).expect("X X^T always conforms")
}

/// Keeps entries `>= t`, zeroes the rest.
pub fn rectify(g: &Matrix, t: f64) -> Matrix {
    g.map(|r| if r >= t { r } else { 0.0 })
}

/// `|| tau_t(X X^T) - tau_t(X' X'^T) ||^2`.
pub fn relation_loss(x: &Matrix, xr: &Matrix, t: f64) -> Result<f64> {
    same_shape(x, xr, "relation_loss")?;
    let target = rectify(&gram(x), t);
    let recon = rectify(&gram(xr), t);
    squared_error(&target, &recon)
}

/// Derivative of [`relation_loss`] with respect to `xr`. Entries of
/// `X' X'^T` below `t` are clipped to a constant and pass no gradient.
pub fn relation_grad(x: &Matrix, xr: &Matrix, t: f64) -> Result<Matrix> {
    same_shape(x, xr, "relation_grad")?;
    let target = rectify(&gram(x), t);
    let g = gram(xr);
    let e = target.zip_map(&g, |tg, r| if r >= t { 2.0 * (r - tg) } else { 0.0 })?;
    e.add(&e.transpose())?.matmul(xr)
}

/// Similarity weights for the generalized-autoencoder baseline: the batch
/// Gram matrix min-max scaled to `[0, 1]`. A constant Gram matrix maps to
/// 1 where positive and 0 elsewhere.
pub fn gae_similarity(x: &Matrix) -> Matrix {
    let g = gram(x);
    let (lo, hi) = g
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if g.is_empty() {
        return g;
    }
    if hi > lo {
        g.map(|v| (v - lo) / (hi - lo))
    } else {
        g.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

/// `sum_ij s_ij ||x'_i - x_j||^2` for precomputed weights `s`.
#[allow(clippy::needless_range_loop)]
pub fn weighted_distance_loss(s: &Matrix, x: &Matrix, xr: &Matrix) -> Result<f64> {
    same_shape(x, xr, "weighted_distance_loss")?;
    let n = x.rows();
    if s.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            op: "weighted_distance_loss",
            left: s.shape(),
            right: (n, n),
        });
    }
    let recon_norms: Vec<f64> = (0..n).map(|i| xr.row(i).iter().map(|v| v * v).sum()).collect();
    let input_norms: Vec<f64> = (0..n).map(|j| x.row(j).iter().map(|v| v * v).sum()).collect();
    let cross = xr.matmul_t(x)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let sij = s.get(i, j);
            if sij != 0.0 {
                total += sij * (recon_norms[i] - 2.0 * cross.get(i, j) + input_norms[j]);
            }
        }
    }
    // Cancellation can leave a tiny negative residue for exact matches.
    Ok(total.max(0.0))
}

/// Derivative of [`weighted_distance_loss`] with respect to `xr`:
/// `2 (diag(s 1) X' - s X)`.
pub fn weighted_distance_grad(s: &Matrix, x: &Matrix, xr: &Matrix) -> Result<Matrix> {
    same_shape(x, xr, "weighted_distance_grad")?;
    let pulled = s.matmul(x)?;
    let mut out = xr.clone();
    for i in 0..xr.rows() {
        let row_sum: f64 = s.row(i).iter().sum();
        for (o, p) in out.row_mut(i).iter_mut().zip(pulled.row(i)) {
            *o = 2.0 * (row_sum * *o - p);
        }
    }
    Ok(out)
}

/// `sum 0.5 (mu^2 + sigma^2 - 1 - log sigma^2)` over all samples and latent
/// dimensions.
pub fn kl_standard_normal(mean: &Matrix, log_var: &Matrix) -> Result<f64> {
    same_shape(mean, log_var, "kl_standard_normal")?;
    Ok(mean
        .as_slice()
        .iter()
        .zip(log_var.as_slice())
        .map(|(&mu, &lv)| 0.5 * (mu * mu + lv.exp() - 1.0 - lv))
        .sum())
}

fn require(kind: ObjectiveKind, allowed: &[ObjectiveKind], op: &str) -> Result<()> {
    if allowed.contains(&kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{op} cannot evaluate a {kind} objective")))
    }
}

/// Loss of the plain autoencoder.
pub fn bae_loss(x: &Matrix, xr: &Matrix, spec: &ObjectiveSpec) -> Result<LossValue> {
    let data = reconstruction_loss(spec.recon, x, xr)?;
    Ok(LossValue::assemble(spec, data, 0.0, 0.0, 0.0))
}

/// `(1 - a) L(X, X') + a ||tau_t(X X^T) - tau_t(X' X'^T)||^2`.
pub fn rae_loss(x: &Matrix, xr: &Matrix, spec: &ObjectiveSpec) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Rae], "rae_loss")?;
    relational(x, xr, spec, 0.0)
}

fn relational(x: &Matrix, xr: &Matrix, spec: &ObjectiveSpec, reg: f64) -> Result<LossValue> {
    let data = reconstruction_loss(spec.recon, x, xr)?;
    let rel = if spec.alpha != 0.0 {
        relation_loss(x, xr, spec.t)?
    } else {
        0.0
    };
    Ok(LossValue::assemble(spec, data, rel, reg, 0.0))
}

/// Generalized-autoencoder baseline with min-max scaled Gram weights.
pub fn gae_loss(x: &Matrix, xr: &Matrix) -> Result<LossValue> {
    same_shape(x, xr, "gae_loss")?;
    let data = weighted_distance_loss(&gae_similarity(x), x, xr)?;
    Ok(LossValue::assemble(
        &ObjectiveSpec::new(ObjectiveKind::Gae),
        data,
        0.0,
        0.0,
        0.0,
    ))
}

/// `a L(X, X') + lambda ||W||^2`, the weight norm summed over all layers.
pub fn sae_loss(x: &Matrix, xr: &Matrix, net: &Network, spec: &ObjectiveSpec) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Sae], "sae_loss")?;
    let data = reconstruction_loss(spec.recon, x, xr)?;
    Ok(LossValue::assemble(spec, data, 0.0, net.weight_norm_sq(), 0.0))
}

/// The relational loss plus `lambda ||W||^2`.
pub fn rsae_loss(x: &Matrix, xr: &Matrix, net: &Network, spec: &ObjectiveSpec) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Rsae], "rsae_loss")?;
    relational(x, xr, spec, net.weight_norm_sq())
}

/// `L(X, g(f(X~)))`: reconstruction of the corrupted input scored against
/// the clean input.
pub fn dae_loss(
    x: &Matrix,
    xr_from_corrupted: &Matrix,
    x_corrupted: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Dae], "dae_loss")?;
    same_shape(x, x_corrupted, "dae_loss")?;
    bae_loss(x, xr_from_corrupted, spec)
}

/// Relational denoising loss. The relational half compares `tau_t(X X^T)`
/// with the Gram matrix selected by `spec.denoising_relation`.
pub fn rdae_loss(
    x: &Matrix,
    xr_from_corrupted: &Matrix,
    x_corrupted: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Rdae], "rdae_loss")?;
    same_shape(x, x_corrupted, "rdae_loss")?;
    match spec.denoising_relation {
        DenoisingRelation::Reconstruction => relational(x, xr_from_corrupted, spec, 0.0),
        DenoisingRelation::CorruptedInput => {
            let data = reconstruction_loss(spec.recon, x, xr_from_corrupted)?;
            let rel = relation_loss(x, x_corrupted, spec.t)?;
            Ok(LossValue::assemble(spec, data, rel, 0.0, 0.0))
        }
    }
}

/// Evidence-bound surrogate: `L(X, X') + KL(q(y|x) || N(0, I))`.
pub fn vae_loss(
    x: &Matrix,
    mean: &Matrix,
    log_var: &Matrix,
    xr: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Vae], "vae_loss")?;
    let data = reconstruction_loss(spec.recon, x, xr)?;
    let kl = kl_standard_normal(mean, log_var)?;
    Ok(LossValue::assemble(spec, data, 0.0, 0.0, kl))
}

/// `(1 - a) L(X, X') + a rel + KL`; see the module docs.
pub fn rvae_loss(
    x: &Matrix,
    mean: &Matrix,
    log_var: &Matrix,
    xr: &Matrix,
    spec: &ObjectiveSpec,
) -> Result<LossValue> {
    require(spec.kind, &[ObjectiveKind::Rvae], "rvae_loss")?;
    let kl = kl_standard_normal(mean, log_var)?;
    let mut v = relational(x, xr, spec, 0.0)?;
    v.kl_term = kl;
    v.total = v.reassemble(spec);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_network;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn rand(seed: u64, r: usize, c: usize) -> Matrix {
        Rng::new(seed).uniform(0.0, 1.0, r, c).unwrap()
    }

    #[test]
    fn squared_error_examples() {
        let x = rand(1, 4, 3);
        assert_eq!(squared_error(&x, &x).unwrap(), 0.0);
        let a = Matrix::from_rows(&[[0.0]]);
        let b = Matrix::from_rows(&[[3.0]]);
        assert_eq!(squared_error(&a, &b).unwrap(), 9.0);
        let y = rand(2, 4, 3);
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                oracle += (x.get(i, j) - y.get(i, j)).powi(2);
            }
        }
        assert!((squared_error(&x, &y).unwrap() - oracle).abs() < 1e-12);
        assert!(squared_error(&x, &rand(3, 3, 4)).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let h = Matrix::from_rows(&[[0.5]]);
        assert!((cross_entropy(&h, &h).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let one = Matrix::from_rows(&[[1.0]]);
        let near = Matrix::from_rows(&[[1.0 - 1e-9]]);
        assert!(cross_entropy(&one, &near).unwrap() < 1e-8);
        // Exact 0/1 predictions are clamped instead of producing infinities.
        let zero = Matrix::from_rows(&[[0.0]]);
        let v = cross_entropy(&one, &zero).unwrap();
        assert!((v + CE_CLAMP.ln()).abs() < 1e-9);
        assert!(cross_entropy(&Matrix::from_rows(&[[-0.1]]), &h).is_err());

        let x = rand(4, 3, 5);
        let y = rand(5, 3, 5);
        let mut oracle = 0.0;
        for (t, p) in x.as_slice().iter().zip(y.as_slice()) {
            oracle -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        assert!((cross_entropy(&x, &y).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn gram_examples() {
        let (c, s) = (0.6, 0.8);
        let q = Matrix::from_rows(&[[c, s], [-s, c]]);
        assert!(gram(&q).max_abs_diff(&Matrix::identity(2)) < 1e-15);
        assert_eq!(gram(&Matrix::from_rows(&[[1.0, 2.0]])), Matrix::from_rows(&[[5.0]]));
        let x = rand(6, 5, 4);
        let oracle = x.matmul(&x.transpose()).unwrap();
        assert!(gram(&x).max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn rectify_examples() {
        let g = Matrix::from_rows(&[[0.3, 0.5], [0.7, 0.0]]);
        assert_eq!(rectify(&g, 0.0), g);
        assert_eq!(rectify(&g, 0.5), Matrix::from_rows(&[[0.0, 0.5], [0.7, 0.0]]));
    }

    /// Both terms of the relational loss spelled out entry by entry.
    fn rae_oracle(x: &Matrix, xr: &Matrix, alpha: f64, t: f64) -> f64 {
        let n = x.rows();
        let mut data = 0.0;
        for i in 0..n {
            for j in 0..x.cols() {
                data += (x.get(i, j) - xr.get(i, j)).powi(2);
            }
        }
        let mut rel = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot = |m: &Matrix| (0..m.cols()).map(|k| m.get(i, k) * m.get(j, k)).sum::<f64>();
                let cut = |v: f64| if v >= t { v } else { 0.0 };
                rel += (cut(dot(x)) - cut(dot(xr))).powi(2);
            }
        }
        (1.0 - alpha) * data + alpha * rel
    }

    #[test]
    fn rae_loss_examples() {
        let x = rand(7, 5, 3);
        let xr = rand(8, 5, 3);
        let at0 = rae_loss(&x, &xr, &ObjectiveSpec::new(ObjectiveKind::Rae)).unwrap();
        assert_eq!(at0.total, squared_error(&x, &xr).unwrap());
        let spec = ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(1.0).with_t(0.2);
        assert_eq!(rae_loss(&x, &x, &spec).unwrap().total, 0.0);

        let x = Matrix::from_rows(&[[1.0, 0.5], [0.2, 0.9]]);
        let xr = Matrix::from_rows(&[[0.8, 0.4], [0.1, 0.7]]);
        for (alpha, t) in [(0.3, 0.0), (0.5, 0.4), (0.9, 1.0)] {
            let spec = ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(alpha).with_t(t);
            let v = rae_loss(&x, &xr, &spec).unwrap();
            assert!((v.total - rae_oracle(&x, &xr, alpha, t)).abs() < 1e-12);
        }
        assert!(rae_loss(&x, &rand(1, 3, 2), &spec).is_err());
    }

    #[test]
    fn gae_loss_examples() {
        let zeros = Matrix::zeros(3, 2);
        assert_eq!(gae_loss(&zeros, &rand(1, 3, 2)).unwrap().total, 0.0);

        let x = Matrix::from_rows(&[[0.3, 0.4]]);
        let xr = Matrix::from_rows(&[[0.5, 0.1]]);
        let s = gae_similarity(&x);
        let expected = s.get(0, 0) * squared_error(&x, &xr).unwrap();
        assert!((gae_loss(&x, &xr).unwrap().total - expected).abs() < 1e-15);

        let x = rand(10, 3, 4);
        let xr = rand(11, 3, 4);
        let s = gae_similarity(&x);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..4).map(|k| (xr.get(i, k) - x.get(j, k)).powi(2)).sum();
                oracle += s.get(i, j) * d;
            }
        }
        assert!((gae_loss(&x, &xr).unwrap().total - oracle).abs() < 1e-12);
        let smin = s.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = s.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((smin, smax), (0.0, 1.0));
    }

    #[test]
    fn sparse_losses() {
        let mut rng = Rng::new(12);
        let net = init_network(&[4, 3, 2], &mut rng).unwrap();
        let x = rand(13, 5, 4);
        let xr = rand(14, 5, 4);
        let sae = ObjectiveSpec::new(ObjectiveKind::Sae).with_alpha(1.0);
        assert_eq!(
            sae_loss(&x, &xr, &net, &sae).unwrap().total,
            squared_error(&x, &xr).unwrap()
        );
        let rsae = ObjectiveSpec::new(ObjectiveKind::Rsae).with_alpha(0.4).with_t(0.1);
        let rae = ObjectiveSpec { kind: ObjectiveKind::Rae, ..rsae };
        assert_eq!(
            rsae_loss(&x, &xr, &net, &rsae).unwrap().total,
            rae_loss(&x, &xr, &rae).unwrap().total
        );

        let mut oracle = 0.0;
        for l in &net.layers {
            for v in l.weight.as_slice() {
                oracle += v * v;
            }
        }
        let v = sae_loss(&x, &xr, &net, &sae.with_lambda(0.01)).unwrap();
        assert!((v.regularizer_term - oracle).abs() < 1e-12);
        assert!((v.total - (squared_error(&x, &xr).unwrap() + 0.01 * oracle)).abs() < 1e-12);

        let mut zero = net.clone();
        for l in &mut zero.layers {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
        }
        assert_eq!(sae_loss(&x, &xr, &zero, &sae.with_lambda(0.5)).unwrap().regularizer_term, 0.0);
    }

    #[test]
    fn denoising_losses() {
        let x = rand(15, 4, 3);
        let xr = rand(16, 4, 3);
        let dae = ObjectiveSpec::new(ObjectiveKind::Dae);
        let bae = ObjectiveSpec::new(ObjectiveKind::Bae);
        assert_eq!(
            dae_loss(&x, &xr, &x, &dae).unwrap(),
            bae_loss(&x, &xr, &bae).unwrap()
        );
        let noisy = rand(17, 4, 3);
        let rdae = ObjectiveSpec::new(ObjectiveKind::Rdae);
        assert_eq!(
            rdae_loss(&x, &xr, &noisy, &rdae).unwrap().total,
            dae_loss(&x, &xr, &noisy, &dae).unwrap().total
        );
        let rdae = rdae.with_alpha(0.5).with_t(0.3);
        let v = rdae_loss(&x, &xr, &noisy, &rdae).unwrap();
        assert!((v.total - rae_oracle(&x, &xr, 0.5, 0.3)).abs() < 1e-12);
        let literal = ObjectiveSpec {
            denoising_relation: DenoisingRelation::CorruptedInput,
            ..rdae
        };
        let v = rdae_loss(&x, &xr, &noisy, &literal).unwrap();
        let expected = 0.5 * squared_error(&x, &xr).unwrap()
            + 0.5 * squared_error(&rectify(&gram(&x), 0.3), &rectify(&gram(&noisy), 0.3)).unwrap();
        assert!((v.total - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let z = Matrix::zeros(3, 2);
        assert_eq!(kl_standard_normal(&z, &z).unwrap(), 0.0);
        let mu = Matrix::from_rows(&[[2.0]]);
        assert!((kl_standard_normal(&mu, &Matrix::zeros(1, 1)).unwrap() - 2.0).abs() < 1e-15);
        let x = rand(18, 2, 3);
        let xr = rand(19, 2, 3);
        let mean = rand(20, 2, 2);
        let lv = rand(21, 2, 2);
        let vae = vae_loss(&x, &mean, &lv, &xr, &ObjectiveSpec::new(ObjectiveKind::Vae)).unwrap();
        let rvae =
            rvae_loss(&x, &mean, &lv, &xr, &ObjectiveSpec::new(ObjectiveKind::Rvae)).unwrap();
        assert_eq!(vae.total, rvae.total);
    }

    #[test]
    fn validation_and_names() {
        assert!(ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(1.5).validate().is_err());
        assert!(ObjectiveSpec::new(ObjectiveKind::Rae).with_t(-1.0).validate().is_err());
        assert!(ObjectiveSpec::new(ObjectiveKind::Sae).with_lambda(0.1).validate().is_ok());
        for k in ObjectiveKind::ALL {
            assert_eq!(k.name().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert_eq!("rdae".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::Rdae);
        assert!("cae".parse::<ObjectiveKind>().is_err());
    }

    proptest! {
        #[test]
        fn loss_total_reassembles(seed in 0u64..1000, alpha in 0.0f64..=1.0, t in 0.0f64..2.0,
                                  lambda in 0.0f64..0.1) {
            let mut rng = Rng::new(seed);
            let net = init_network(&[4, 2], &mut rng).unwrap();
            let x = rng.uniform(0.0, 1.0, 5, 4).unwrap();
            let xr = rng.uniform(0.0, 1.0, 5, 4).unwrap();
            let mean = rng.uniform(-1.0, 1.0, 5, 2).unwrap();
            let lv = rng.uniform(-1.0, 1.0, 5, 2).unwrap();
            for kind in [ObjectiveKind::Rae, ObjectiveKind::Rsae, ObjectiveKind::Rvae,
                         ObjectiveKind::Sae] {
                let spec = ObjectiveSpec::new(kind).with_alpha(alpha).with_t(t).with_lambda(lambda);
                let v = match kind {
                    ObjectiveKind::Rae => rae_loss(&x, &xr, &spec),
                    ObjectiveKind::Rsae => rsae_loss(&x, &xr, &net, &spec),
                    ObjectiveKind::Sae => sae_loss(&x, &xr, &net, &spec),
                    _ => rvae_loss(&x, &mean, &lv, &xr, &spec),
                }.unwrap();
                let w = spec.weights();
                let manual = w.data * v.data_term + w.relation * v.relation_term
                    + w.regularizer * v.regularizer_term + w.kl * v.kl_term;
                prop_assert!((v.total - manual).abs() <= 1e-12 * manual.abs().max(1.0));
            }
        }

        #[test]
        fn perfect_reconstruction_costs_nothing(seed in 0u64..1000, alpha in 0.0f64..=1.0,
                                                t in 0.0f64..3.0) {
            let x = rand(seed, 4, 3);
            let spec = ObjectiveSpec::new(ObjectiveKind::Rae).with_alpha(alpha).with_t(t);
            prop_assert_eq!(rae_loss(&x, &x, &spec).unwrap().total, 0.0);
        }

        #[test]
        fn rectify_is_idempotent(seed in 0u64..1000, t in 0.0f64..2.0) {
            let g = gram(&rand(seed, 5, 3));
            let once = rectify(&g, t);
            prop_assert_eq!(rectify(&once, t), once);
        }

        #[test]
        fn gram_is_symmetric(seed in 0u64..1000, n in 1usize..8, m in 1usize..8) {
            let g = gram(&Rng::new(seed).uniform(-3.0, 3.0, n, m).unwrap());
            prop_assert!(g.max_abs_diff(&g.transpose()) <= 1e-12);
        }

        #[test]
        fn relation_term_shrinks_with_threshold(seed in 0u64..1000) {
            let x = rand(seed, 5, 3);
            let xr = rand(seed + 7, 5, 3);
            let mut thresholds: Vec<f64> = gram(&x).as_slice().iter()
                .chain(gram(&xr).as_slice()).copied().collect();
            thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let top = *thresholds.last().unwrap();
            let mut ts = vec![0.0];
            ts.extend(thresholds.iter().map(|v| v + 1e-9));
            ts.push(top + 1.0);
            // Once t passes every entry the term is exactly zero.
            prop_assert_eq!(relation_loss(&x, &xr, top + 1.0).unwrap(), 0.0);
            let last = relation_loss(&x, &xr, *ts.last().unwrap()).unwrap();
            prop_assert!(ts.iter().all(|&t| relation_loss(&x, &xr, t).unwrap() >= last));
        }
    }
}
