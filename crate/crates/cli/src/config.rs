//! Run configuration: a TOML file with `[data]`, `[model]`, `[objective]`,
//! `[train]`, `[eval]` and `[output]` sections. Every field except
//! `objective.kind` has a default.

use std::fs;
use std::path::{Path, PathBuf};

use rae_core::data::{load_cifar10, load_mnist, read_csv, subset, Dataset};
use rae_core::evaluation::{PipelineConfig, SweepSplit};
use rae_core::objectives::{DenoisingRelation, Reconstruction};
use rae_core::softmax::SoftmaxConfig;
use rae_core::trainer::TrainConfig;
use rae_core::{plan_layers, ObjectiveKind, ObjectiveSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `mnist`, `cifar10` or `csv`.
    pub format: String,
    /// Paths are relative to the data directory unless absolute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub batches: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Stratified subset size; the whole file when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    pub subset_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            format: "mnist".into(),
            images: None,
            labels: None,
            batches: Vec::new(),
            csv: None,
            subset: None,
            subset_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Explicit widths from input to code; overrides `bottleneck`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_sizes: Option<Vec<usize>>,
    /// Smallest width for the automatic layer plan.
    pub bottleneck: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layer_sizes: None,
            bottleneck: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: String,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_recon")]
    pub recon: String,
    #[serde(default = "default_denoising_relation")]
    pub denoising_relation: String,
}

fn default_recon() -> String {
    "squared_error".into()
}

fn default_denoising_relation() -> String {
    "reconstruction".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub layerwise: bool,
    pub fine_tune_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            epsilon: d.epsilon,
            seed: d.seed,
            layerwise: d.layerwise,
            fine_tune_epochs: d.fine_tune_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub folds: usize,
    /// Use only the first `fold_limit` folds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_limit: Option<usize>,
    pub split_seed: u64,
    /// Sweep metric: held-out (`test`) or training (`train`) MSE.
    pub split: String,
    pub softmax_learning_rate: f64,
    pub softmax_epochs: usize,
    pub softmax_batch_size: usize,
    pub softmax_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let s = SoftmaxConfig::default();
        EvalSection {
            folds: 10,
            fold_limit: None,
            split_seed: 0,
            split: "test".into(),
            softmax_learning_rate: s.learning_rate,
            softmax_epochs: s.epochs,
            softmax_batch_size: s.batch_size,
            softmax_seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("`{key}` {msg}"))
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the config recorded in a run manifest when
    /// the file ends in `.json`.
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let cfg: Config = serde_json::from_value(manifest["config"].clone())
                .map_err(|e| CliError::config(format!("{}: `config` {e}", path.display())))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Config::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.objective_spec()?;
        self.train_config()?;
        match self.data.format.as_str() {
            "mnist" | "cifar10" | "csv" => {}
            other => return Err(bad("data.format", format!("must be mnist, cifar10 or csv, got {other:?}"))),
        }
        if let Some(sizes) = &self.model.layer_sizes {
            if sizes.len() < 2 || sizes.contains(&0) {
                return Err(bad("model.layer_sizes", "needs at least two positive widths"));
            }
        }
        if self.model.bottleneck == 0 {
            return Err(bad("model.bottleneck", "must be at least 1"));
        }
        if self.eval.folds < 2 {
            return Err(bad("eval.folds", format!("must be at least 2, got {}", self.eval.folds)));
        }
        if self.eval.fold_limit.is_some_and(|l| l == 0 || l > self.eval.folds) {
            return Err(bad("eval.fold_limit", "must be between 1 and `eval.folds`"));
        }
        self.eval.split.parse::<SweepSplit>().map_err(|_| bad("eval.split", "must be train or test"))?;
        if self.eval.softmax_learning_rate.is_nan() || self.eval.softmax_learning_rate <= 0.0 || self.eval.softmax_batch_size == 0 {
            return Err(bad(
                "eval.softmax_learning_rate",
                "and `eval.softmax_batch_size` must be positive",
            ));
        }
        Ok(())
    }

    pub fn objective_spec(&self) -> CliResult<ObjectiveSpec> {
        let o = &self.objective;
        let kind: ObjectiveKind = o.kind.parse().map_err(|_| {
            let valid: Vec<&str> = ObjectiveKind::ALL.iter().map(|k| k.name()).collect();
            bad("objective.kind", format!("must be one of {}, got {:?}", valid.join(", "), o.kind))
        })?;
        for (key, v) in [("alpha", o.alpha), ("t", o.t), ("lambda", o.lambda), ("delta", o.delta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(bad(&format!("objective.{key}"), format!("must be finite and >= 0, got {v}")));
            }
        }
        if o.alpha > 1.0 {
            return Err(bad("objective.alpha", format!("must be in [0, 1], got {}", o.alpha)));
        }
        let recon = match o.recon.as_str() {
            "squared_error" => Reconstruction::SquaredError,
            "cross_entropy" => Reconstruction::CrossEntropy,
            other => return Err(bad("objective.recon", format!("must be squared_error or cross_entropy, got {other:?}"))),
        };
        let denoising_relation = match o.denoising_relation.as_str() {
            "reconstruction" => DenoisingRelation::Reconstruction,
            "corrupted_input" => DenoisingRelation::CorruptedInput,
            other => {
                return Err(bad(
                    "objective.denoising_relation",
                    format!("must be reconstruction or corrupted_input, got {other:?}"),
                ))
            }
        };
        let mut spec = ObjectiveSpec::new(kind)
            .with_alpha(o.alpha)
            .with_t(o.t)
            .with_lambda(o.lambda)
            .with_delta(o.delta)
            .with_recon(recon);
        spec.denoising_relation = denoising_relation;
        Ok(spec)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        if t.learning_rate <= 0.0 || !t.learning_rate.is_finite() {
            return Err(bad("train.learning_rate", format!("must be positive, got {}", t.learning_rate)));
        }
        if t.batch_size == 0 {
            return Err(bad("train.batch_size", "must be at least 1"));
        }
        if t.max_epochs == 0 {
            return Err(bad("train.max_epochs", "must be at least 1"));
        }
        if t.epsilon.is_nan() || t.epsilon < 0.0 {
            return Err(bad("train.epsilon", format!("must be >= 0, got {}", t.epsilon)));
        }
        Ok(TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            epsilon: t.epsilon,
            seed: t.seed,
            layerwise: t.layerwise,
            fine_tune_epochs: t.fine_tune_epochs,
        })
    }

    pub fn softmax_config(&self) -> SoftmaxConfig {
        SoftmaxConfig {
            learning_rate: self.eval.softmax_learning_rate,
            epochs: self.eval.softmax_epochs,
            batch_size: self.eval.softmax_batch_size,
            seed: self.eval.softmax_seed,
        }
    }

    pub fn sweep_split(&self) -> SweepSplit {
        self.eval.split.parse().expect("validated")
    }

    /// Layer widths for inputs of width `input_dim`.
    pub fn layer_sizes(&self, input_dim: usize) -> CliResult<Vec<usize>> {
        match &self.model.layer_sizes {
            Some(sizes) if sizes[0] != input_dim => Err(bad(
                "model.layer_sizes",
                format!("starts at {} but the data has {input_dim} features", sizes[0]),
            )),
            Some(sizes) => Ok(sizes.clone()),
            None => {
                let sizes = plan_layers(input_dim, self.model.bottleneck)
                    .map_err(|e| bad("model.bottleneck", e))?;
                if sizes.len() < 2 {
                    return Err(bad("model.bottleneck", "leaves no layer to train"));
                }
                Ok(sizes)
            }
        }
    }

    pub fn pipeline(&self, input_dim: usize, jobs: usize) -> CliResult<PipelineConfig> {
        let mut p = PipelineConfig::new(self.layer_sizes(input_dim)?, self.objective_spec()?);
        p.train = self.train_config()?;
        p.softmax = self.softmax_config();
        p.folds = self.eval.folds;
        p.fold_limit = self.eval.fold_limit;
        p.split_seed = self.eval.split_seed;
        p.jobs = jobs;
        Ok(p)
    }

    /// Absolute paths of the input files.
    pub fn data_files(&self, data_dir: &Path) -> CliResult<Vec<PathBuf>> {
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { data_dir.join(p) };
        let need = |opt: &Option<PathBuf>, key: &str| {
            opt.as_ref().map(resolve).ok_or_else(|| bad(key, "is required for this data format"))
        };
        match self.data.format.as_str() {
            "mnist" => Ok(vec![need(&self.data.images, "data.images")?, need(&self.data.labels, "data.labels")?]),
            "cifar10" if self.data.batches.is_empty() => Err(bad("data.batches", "must list at least one file")),
            "cifar10" => Ok(self.data.batches.iter().map(resolve).collect()),
            _ => Ok(vec![need(&self.data.csv, "data.csv")?]),
        }
    }

    pub fn load_dataset(&self, data_dir: &Path) -> CliResult<Dataset> {
        let files = self.data_files(data_dir)?;
        let ds = match self.data.format.as_str() {
            "mnist" => load_mnist(&files[0], &files[1])?,
            "cifar10" => load_cifar10(&files)?,
            _ => read_csv(&files[0], "csv")?,
        };
        match self.data.subset {
            Some(n) if n > ds.len() => Err(bad(
                "data.subset",
                format!("asks for {n} samples but the dataset has {}", ds.len()),
            )),
            Some(n) => Ok(subset(&ds, n, self.data.subset_seed)?),
            None => Ok(ds),
        }
    }
}
