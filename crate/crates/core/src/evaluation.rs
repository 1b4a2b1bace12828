//! Reconstruction error, k-fold evaluation with a softmax classifier on the
//! extracted codes, and the alpha sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{kfold_splits, Dataset, Fold};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Network;
use crate::objectives::{ObjectiveKind, ObjectiveSpec};
use crate::rng::derive_seed;
use crate::softmax::{classify_error, train_softmax, Classifier, SoftmaxConfig};
use crate::trainer::{fit, RunReport, TrainConfig};

/// Mean over samples and features of the squared reconstruction error.
/// Variational networks reconstruct from the latent mean.
pub fn reconstruction_mse(net: &Network, data: &Matrix) -> Result<f64> {
    if data.cols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "reconstruction_mse",
            left: data.shape(),
            right: (data.rows(), net.input_dim()),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("no samples to reconstruct".into()));
    }
    let xr = net.reconstruct(data)?;
    Ok(data.sub(&xr)?.sum_sq() / data.len() as f64)
}

/// Everything needed to train and score one autoencoder variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sizes: Vec<usize>,
    pub objective: ObjectiveSpec,
    pub train: TrainConfig,
    pub softmax: SoftmaxConfig,
    pub folds: usize,
    /// Evaluate only the first `n` folds (all when `None`).
    pub fold_limit: Option<usize>,
    /// Seed of the fold assignment.
    pub split_seed: u64,
    pub jobs: usize,
}

impl PipelineConfig {
    pub fn new(sizes: Vec<usize>, objective: ObjectiveSpec) -> Self {
        PipelineConfig {
            sizes,
            objective,
            train: TrainConfig::default(),
            softmax: SoftmaxConfig::default(),
            folds: 10,
            fold_limit: None,
            split_seed: 0,
            jobs: 1,
        }
    }

    fn active_folds(&self, n: usize) -> Result<Vec<(usize, Fold)>> {
        let folds = kfold_splits(n, self.folds, self.split_seed)?;
        let limit = self.fold_limit.unwrap_or(self.folds).clamp(1, self.folds);
        Ok(folds.into_iter().enumerate().take(limit).collect())
    }

    /// Training configuration of fold `f`; it does not depend on the
    /// objective, so variants compared on one fold share an initialization.
    fn fold_train(&self, f: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.train.seed, &[f as u64]),
            ..self.train.clone()
        }
    }

    fn fold_softmax(&self, f: usize) -> SoftmaxConfig {
        SoftmaxConfig {
            seed: derive_seed(self.softmax.seed, &[f as u64]),
            ..self.softmax.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub mse: f64,
    pub error: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub mse: f64,
    pub mse_std: f64,
    pub error: f64,
    pub error_std: f64,
    pub folds: Vec<FoldMetrics>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_folds(model: impl Into<String>, folds: Vec<FoldMetrics>) -> Self {
        let (mse, mse_std) = mean_std(&folds.iter().map(|f| f.mse).collect::<Vec<_>>());
        let (error, error_std) = mean_std(&folds.iter().map(|f| f.error).collect::<Vec<_>>());
        EvalReport {
            model: model.into(),
            mse,
            mse_std,
            error,
            error_std,
            folds,
        }
    }
}

fn checkpoint_path(dir: &Path, model: &str, fold: usize) -> PathBuf {
    dir.join(format!("{model}_fold{fold}.ckpt"))
}

fn classifier_path(dir: &Path, model: &str, fold: usize) -> PathBuf {
    dir.join(format!("{model}_fold{fold}.softmax"))
}

fn in_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(work))
}

fn score_fold(net: &Network, clf: &Classifier, ds: &Dataset, fold: &Fold) -> Result<(f64, f64)> {
    let test = ds.select(&fold.test);
    let mse = reconstruction_mse(net, &test.features)?;
    let error = classify_error(clf, &net.encode(&test.features)?, &test.labels)?;
    Ok((mse, error))
}

fn run_fold(
    ds: &Dataset,
    cfg: &PipelineConfig,
    f: usize,
    fold: &Fold,
    artifacts: Option<&Path>,
) -> Result<(FoldMetrics, Vec<RunReport>)> {
    let train = ds.select(&fold.train);
    let (net, reports) = fit(&cfg.sizes, &train.features, &cfg.objective, &cfg.fold_train(f))?;
    let clf = train_softmax(&net.encode(&train.features)?, &train.labels, &cfg.fold_softmax(f))?;
    if let Some(dir) = artifacts {
        let model = cfg.objective.kind.name();
        net.save(&checkpoint_path(dir, model, f))?;
        clf.save(&classifier_path(dir, model, f))?;
    }
    let (mse, error) = score_fold(&net, &clf, ds, fold)?;
    let metrics = FoldMetrics {
        fold: f,
        mse,
        error,
        train_size: fold.train.len(),
        test_size: fold.test.len(),
        epochs: reports.iter().map(|r| r.epoch_losses.len()).sum(),
    };
    Ok((metrics, reports))
}

/// k-fold protocol: per fold, train the autoencoder on the training part,
/// fit softmax on its codes, and score held-out MSE and error. When
/// `artifacts` is set, each fold's network and classifier are saved there.
pub fn cross_validate(ds: &Dataset, cfg: &PipelineConfig, artifacts: Option<&Path>) -> Result<EvalReport> {
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let folds = cfg.active_folds(ds.len())?;
    let results: Vec<Result<(FoldMetrics, Vec<RunReport>)>> = in_pool(cfg.jobs, || {
        folds
            .par_iter()
            .map(|(f, fold)| run_fold(ds, cfg, *f, fold, artifacts))
            .collect()
    })?;
    let metrics = results
        .into_iter()
        .map(|r| r.map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_folds(cfg.objective.kind.name(), metrics))
}

/// Recomputes one fold's metrics from the artifacts saved by
/// [`cross_validate`].
pub fn replay_fold(ds: &Dataset, cfg: &PipelineConfig, fold: usize, artifacts: &Path) -> Result<FoldMetrics> {
    let folds = kfold_splits(ds.len(), cfg.folds, cfg.split_seed)?;
    let split = folds
        .get(fold)
        .ok_or_else(|| Error::InvalidArgument(format!("no fold {fold}")))?;
    let model = cfg.objective.kind.name();
    let net = Network::load(&checkpoint_path(artifacts, model, fold))?;
    let clf = Classifier::load(&classifier_path(artifacts, model, fold))?;
    let (mse, error) = score_fold(&net, &clf, ds, split)?;
    Ok(FoldMetrics {
        fold,
        mse,
        error,
        train_size: split.train.len(),
        test_size: split.test.len(),
        epochs: 0,
    })
}

/// Which part of each fold the sweep scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSplit {
    Train,
    Test,
}

impl std::str::FromStr for SweepSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SweepSplit::Train),
            "test" => Ok(SweepSplit::Test),
            other => Err(Error::InvalidArgument(format!(
                "`split` must be train or test, got {other:?}"
            ))),
        }
    }
}

/// `{0, 0.02, ..., 1}`, computed as `i / 50` so every value is the nearest
/// double to its decimal.
pub fn sweep_alphas() -> Vec<f64> {
    (0..=50).map(|i| i as f64 / 50.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: ObjectiveKind,
    pub alphas: Vec<f64>,
    pub mse: Vec<f64>,
    /// Horizontal references, `(name, mse)`.
    pub baselines: Vec<(String, f64)>,
}

impl SweepResult {
    pub fn baseline(&self, name: &str) -> Option<f64> {
        self.baselines.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// `(alpha, mse)` at the lowest MSE.
    pub fn best(&self) -> (f64, f64) {
        self.alphas
            .iter()
            .zip(&self.mse)
            .fold((f64::NAN, f64::INFINITY), |acc, (&a, &m)| if m < acc.1 { (a, m) } else { acc })
    }

    /// `alpha,mse` rows followed by one row per baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,mse\n");
        for (a, m) in self.alphas.iter().zip(&self.mse) {
            let _ = writeln!(out, "{a},{m}");
        }
        for (name, m) in &self.baselines {
            let _ = writeln!(out, "{name},{m}");
        }
        out
    }
}

/// MSE of one objective averaged over the active folds.
fn sweep_point(ds: &Dataset, cfg: &PipelineConfig, objective: &ObjectiveSpec, split: SweepSplit) -> Result<f64> {
    let folds = cfg.active_folds(ds.len())?;
    let mut total = 0.0;
    for (f, fold) in &folds {
        let train = ds.select(&fold.train);
        let (net, _) = fit(&cfg.sizes, &train.features, objective, &cfg.fold_train(*f))?;
        let scored = match split {
            SweepSplit::Train => train.features,
            SweepSplit::Test => ds.select(&fold.test).features,
        };
        total += reconstruction_mse(&net, &scored)?;
    }
    Ok(total / folds.len() as f64)
}

/// Trains one model per alpha in [`sweep_alphas`] from the same
/// initialization, plus BAE and GAE baselines, and records their MSE.
pub fn alpha_sweep(ds: &Dataset, cfg: &PipelineConfig, split: SweepSplit) -> Result<SweepResult> {
    let kind = cfg.objective.kind;
    if !kind.uses_alpha() {
        return Err(Error::InvalidArgument(format!(
            "{kind} has no `alpha` to sweep"
        )));
    }
    let alphas = sweep_alphas();
    let mut jobs: Vec<ObjectiveSpec> = alphas.iter().map(|&a| cfg.objective.with_alpha(a)).collect();
    let baselines = [ObjectiveKind::Bae, ObjectiveKind::Gae];
    jobs.extend(baselines.iter().map(|&k| ObjectiveSpec { kind: k, ..cfg.objective }));
    let results: Vec<Result<f64>> = in_pool(cfg.jobs, || {
        jobs.par_iter().map(|obj| sweep_point(ds, cfg, obj, split)).collect()
    })?;
    let mut mse = results.into_iter().collect::<Result<Vec<_>>>()?;
    let tail = mse.split_off(alphas.len());
    Ok(SweepResult {
        kind,
        alphas,
        mse,
        baselines: baselines.iter().map(|k| k.name().to_string()).zip(tail).collect(),
    })
}

pub const EVAL_CSV_HEADER: &str = "model,fold,mse,error";

/// `model,fold,mse,error` rows, one per fold, then `mean` and `std` rows
/// per model.
pub fn eval_reports_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{EVAL_CSV_HEADER}\n");
    for r in reports {
        for f in &r.folds {
            let _ = writeln!(out, "{},{},{},{}", r.model, f.fold, f.mse, f.error);
        }
        let _ = writeln!(out, "{},mean,{},{}", r.model, r.mse, r.error);
        let _ = writeln!(out, "{},std,{},{}", r.model, r.mse_std, r.error_std);
    }
    out
}
