//! Multinomial logistic regression trained by minibatch SGD on the mean
//! cross-entropy.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        SoftmaxConfig {
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// classes × features.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Classifier {
    /// All-zero parameters: every class scores the same.
    pub fn uniform(classes: usize, features: usize) -> Self {
        Classifier {
            weight: Matrix::zeros(classes, features),
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    /// Class logits, one row per sample.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.weight.cols() {
            return Err(Error::DimensionMismatch {
                op: "softmax scores",
                left: x.shape(),
                right: self.weight.shape(),
            });
        }
        x.matmul_t(&self.weight)?.add_row_vector(&self.bias)
    }

    /// Argmax class per row; ties go to the lowest class id.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u8>> {
        let s = self.scores(x)?;
        Ok((0..s.rows())
            .map(|i| {
                let row = s.row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect())
    }
}

// Serialized as u32 classes, u32 features, then the weight matrix and the
// bias as little-endian f64.
impl Classifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (k, d) = self.weight.shape();
        let mut buf = vec![0u8; 8 + 8 * (k * d + k)];
        LittleEndian::write_u32(&mut buf[0..4], k as u32);
        LittleEndian::write_u32(&mut buf[4..8], d as u32);
        let values: Vec<f64> = self.weight.as_slice().iter().chain(&self.bias).copied().collect();
        LittleEndian::write_f64_into(&values, &mut buf[8..]);
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::format(path, "truncated classifier"));
        }
        let k = LittleEndian::read_u32(&bytes[0..4]) as usize;
        let d = LittleEndian::read_u32(&bytes[4..8]) as usize;
        if bytes.len() != 8 + 8 * (k * d + k) {
            return Err(Error::format(path, "classifier length does not match its header"));
        }
        let mut values = vec![0.0; k * d + k];
        LittleEndian::read_f64_into(&bytes[8..], &mut values);
        let bias = values.split_off(k * d);
        Ok(Classifier {
            weight: Matrix::from_vec(k, d, values)?,
            bias,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn check_labels(x: &Matrix, labels: &[u8]) -> Result<()> {
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            op: "labels",
            left: x.shape(),
            right: (labels.len(), 1),
        });
    }
    Ok(())
}

/// Fits a classifier over classes `0..=max(labels)` from zero parameters.
pub fn train_softmax(features: &Matrix, labels: &[u8], cfg: &SoftmaxConfig) -> Result<Classifier> {
    check_labels(features, labels)?;
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::InvalidArgument(
            "softmax regression needs at least two classes".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument(
            "softmax needs batch_size >= 1 and learning_rate > 0".into(),
        ));
    }
    let classes = *labels.iter().max().expect("non-empty") as usize + 1;
    let mut clf = Classifier::uniform(classes, features.cols());
    let root = Rng::new(cfg.seed);
    for epoch in 0..cfg.epochs {
        let order = root.derive(&[epoch as u64]).permutation(features.rows());
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select_rows(chunk);
            let mut delta = softmax_rows(&clf.scores(&x)?);
            for (r, &i) in chunk.iter().enumerate() {
                delta.row_mut(r)[labels[i] as usize] -= 1.0;
            }
            let step = -cfg.learning_rate / chunk.len() as f64;
            clf.weight.add_scaled_in_place(&delta.t_matmul(&x)?, step)?;
            for (b, g) in clf.bias.iter_mut().zip(delta.column_sums()) {
                *b += step * g;
            }
        }
    }
    if !clf.weight.is_finite() || clf.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("softmax parameters"));
    }
    Ok(clf)
}

/// Fraction of rows whose predicted class differs from the label.
pub fn classify_error(clf: &Classifier, features: &Matrix, labels: &[u8]) -> Result<f64> {
    check_labels(features, labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no samples to classify".into()));
    }
    let wrong = clf
        .predict(features)?
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}
