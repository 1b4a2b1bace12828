//! Minibatch SGD with an epoch-level convergence test.
//!
//! Each epoch reshuffles the data, takes one step per minibatch, then
//! measures the objective on the full training set (`loss_c`). Training
//! stops once `|loss_c - loss_p| <= epsilon` or after `max_epochs` epochs.
//! A step moves the parameters by `learning_rate / batch_rows` times the
//! gradient of the summed batch loss, i.e. by the per-sample average.
//!
//! All randomness (shuffles, corruption, latent draws) comes from streams
//! derived from `(seed, purpose, epoch, batch)`, so a run is a pure function
//! of its inputs.

use std::time::Instant;

use crate::corruption::{CorruptionSpec, Corruptor};
use crate::error::{Error, Result};
use crate::gradient::{evaluate, forward_for, loss, StepNoise};
use crate::matrix::Matrix;
use crate::model::{Activation, Network};
use crate::objectives::{LossValue, ObjectiveKind, ObjectiveSpec};
use crate::rng::Rng;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_CORRUPT: u64 = 3;
const STREAM_LATENT: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_STAGE: u64 = 6;
const STREAM_STEP: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Greedy layer-by-layer training instead of end-to-end.
    pub layerwise: bool,
    /// Whole-stack epochs after layerwise training.
    pub fine_tune_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 128,
            max_epochs: 400,
            epsilon: 0.0,
            seed: 0,
            layerwise: false,
            fine_tune_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "`learning_rate` must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("`batch_size` must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("`max_epochs` must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "`epsilon` must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Objective summed over the full training set.
    pub loss: LossValue,
    pub samples: usize,
    pub features: usize,
}

impl EpochRecord {
    /// Total loss per sample per feature.
    pub fn mean_loss(&self) -> f64 {
        self.loss.total / (self.samples * self.features).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub epoch_losses: Vec<EpochRecord>,
    pub stopped_reason: StopReason,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn final_loss(&self) -> &EpochRecord {
        self.epoch_losses.last().expect("at least one epoch")
    }

    /// Equality ignoring wall time.
    pub fn same_trajectory(&self, other: &RunReport) -> bool {
        self.epoch_losses == other.epoch_losses && self.stopped_reason == other.stopped_reason
    }
}

/// Fresh network for `objective`: Xavier-initialized sigmoid layers, with a
/// variance head for variational kinds. Deterministic in `seed`.
pub fn init_for(sizes: &[usize], objective: &ObjectiveSpec, seed: u64) -> Result<Network> {
    let mut rng = Rng::new(seed).derive(&[STREAM_INIT]);
    let net = Network::init(sizes, Activation::Sigmoid, &mut rng)?;
    if objective.kind.is_variational() {
        net.with_variance_head(&mut rng)
    } else {
        Ok(net)
    }
}

/// Generates the per-step random inputs a given objective consumes.
struct NoiseSource {
    seed: u64,
    corruptor: Option<Corruptor>,
    latent_dim: Option<usize>,
}

impl NoiseSource {
    fn new(net: &Network, data: &Matrix, objective: &ObjectiveSpec, seed: u64) -> Result<Self> {
        let corruptor = if objective.kind.is_denoising() {
            Some(Corruptor::fit(CorruptionSpec::isotropic(objective.delta), data)?)
        } else {
            None
        };
        Ok(NoiseSource {
            seed,
            corruptor,
            latent_dim: objective.kind.is_variational().then(|| net.latent_dim()),
        })
    }

    fn draw(&self, batch: &Matrix, stream: u64, epoch: usize, index: usize) -> Result<StepNoise> {
        let coords = [stream, epoch as u64, index as u64];
        let corrupted = match &self.corruptor {
            Some(c) => {
                let mut rng = Rng::new(self.seed).derive(&[STREAM_CORRUPT, coords[0], coords[1], coords[2]]);
                Some(c.corrupt(batch, &mut rng)?)
            }
            None => None,
        };
        let latent = match self.latent_dim {
            Some(dim) => {
                let mut rng = Rng::new(self.seed).derive(&[STREAM_LATENT, coords[0], coords[1], coords[2]]);
                Some(rng.gaussian(0.0, 1.0, batch.rows(), dim)?)
            }
            None => None,
        };
        Ok(StepNoise { corrupted, latent })
    }
}

fn check_inputs(net: &Network, data: &Matrix, objective: &ObjectiveSpec, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    objective.validate()?;
    if data.rows() == 0 {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if data.cols() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "train",
            left: data.shape(),
            right: (data.rows(), net.input_dim()),
        });
    }
    if objective.kind.is_variational() != net.is_variational() {
        return Err(Error::InvalidArgument(format!(
            "{} objective on a network {} a variance head",
            objective.kind,
            if net.is_variational() { "with" } else { "without" }
        )));
    }
    Ok(())
}

fn diverged(err: Error, epoch: usize, cfg: &TrainConfig) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            learning_rate: cfg.learning_rate,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Objective summed over `data` in fixed, unshuffled chunks of
/// `batch_size` rows (relational terms are per chunk).
pub fn dataset_loss(
    net: &Network,
    data: &Matrix,
    objective: &ObjectiveSpec,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<LossValue> {
    let noise = NoiseSource::new(net, data, objective, seed)?;
    dataset_loss_with(net, data, objective, batch_size, &noise, epoch)
}

fn dataset_loss_with(
    net: &Network,
    data: &Matrix,
    objective: &ObjectiveSpec,
    batch_size: usize,
    noise: &NoiseSource,
    epoch: usize,
) -> Result<LossValue> {
    let mut total = LossValue::default();
    let indices: Vec<usize> = (0..data.rows()).collect();
    for (i, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        let batch = data.select_rows(chunk);
        let step_noise = noise.draw(&batch, STREAM_EVAL, epoch, i)?;
        let trace = forward_for(net, &batch, objective, &step_noise)?;
        let mut v = loss(net, &batch, objective, &trace)?;
        // The weight penalty belongs to the parameters, not to each chunk.
        if i > 0 && v.regularizer_term != 0.0 {
            v.total -= objective.weights().regularizer * v.regularizer_term;
            v.regularizer_term = 0.0;
        }
        total.accumulate(&v);
    }
    Ok(total)
}

/// Trains `net` in place. See the module docs for the loop.
pub fn train(net: &mut Network, data: &Matrix, objective: &ObjectiveSpec, cfg: &TrainConfig) -> Result<RunReport> {
    train_with_sink(net, data, objective, cfg, &mut |_| {})
}

/// [`train`], reporting each epoch to `sink` as it completes.
pub fn train_with_sink(
    net: &mut Network,
    data: &Matrix,
    objective: &ObjectiveSpec,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochRecord),
) -> Result<RunReport> {
    check_inputs(net, data, objective, cfg)?;
    let start = Instant::now();
    let noise = NoiseSource::new(net, data, objective, cfg.seed)?;
    let root = Rng::new(cfg.seed);
    let mut records = Vec::new();
    let mut previous: Option<f64> = None;
    let mut reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let order = root.derive(&[STREAM_SHUFFLE, epoch as u64]).permutation(data.rows());
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select_rows(chunk);
            let step_noise = noise.draw(&batch, STREAM_STEP, epoch, b)?;
            let (value, grads) =
                evaluate(net, &batch, objective, &step_noise).map_err(|e| diverged(e, epoch, cfg))?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    learning_rate: cfg.learning_rate,
                    loss: value.total,
                });
            }
            net.apply_gradients(&grads, cfg.learning_rate / chunk.len() as f64)?;
        }

        let current = dataset_loss_with(net, data, objective, cfg.batch_size, &noise, epoch)
            .map_err(|e| diverged(e, epoch, cfg))?;
        if !current.is_finite() {
            return Err(Error::Diverged {
                epoch,
                learning_rate: cfg.learning_rate,
                loss: current.total,
            });
        }
        let record = EpochRecord {
            epoch,
            loss: current,
            samples: data.rows(),
            features: data.cols(),
        };
        sink(&record);
        records.push(record);

        // An infinite threshold is met even without a previous loss; a
        // finite one needs two epochs to compare.
        let converged = match previous {
            Some(p) => (current.total - p).abs() <= cfg.epsilon,
            None => cfg.epsilon == f64::INFINITY,
        };
        if converged {
            reason = StopReason::Converged;
            break;
        }
        previous = Some(current.total);
    }

    Ok(RunReport {
        epoch_losses: records,
        stopped_reason: reason,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone)]
pub struct LayerwiseOutcome {
    pub network: Network,
    /// One report per layer, bottom first.
    pub stages: Vec<RunReport>,
    pub fine_tune: Option<RunReport>,
}

/// Objective used for an intermediate layer of a stacked variational model:
/// only the top layer is variational.
fn stage_objective(objective: &ObjectiveSpec, is_top: bool) -> ObjectiveSpec {
    if is_top || !objective.kind.is_variational() {
        return *objective;
    }
    let kind = match objective.kind {
        ObjectiveKind::Vae => ObjectiveKind::Bae,
        _ => ObjectiveKind::Rae,
    };
    ObjectiveSpec { kind, ..*objective }
}

/// Greedy layerwise training: layer `i` is trained as a one-layer
/// autoencoder on the codes of the already-trained layers below it, which
/// stay frozen. Optionally fine-tunes the whole stack afterwards.
pub fn train_layerwise(
    sizes: &[usize],
    data: &Matrix,
    objective: &ObjectiveSpec,
    cfg: &TrainConfig,
) -> Result<LayerwiseOutcome> {
    train_layerwise_with_sink(sizes, data, objective, cfg, &mut |_, _| {})
}

/// [`train_layerwise`] with per-epoch reporting; the sink receives the
/// stage index (`sizes.len() - 1` for the fine-tune pass).
pub fn train_layerwise_with_sink(
    sizes: &[usize],
    data: &Matrix,
    objective: &ObjectiveSpec,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<LayerwiseOutcome> {
    let mut network = init_for(sizes, objective, cfg.seed)?;
    let n_layers = network.layers.len();
    let mut stages = Vec::with_capacity(n_layers);
    let mut codes = data.clone();
    for i in 0..n_layers {
        let is_top = i + 1 == n_layers;
        let stage_obj = stage_objective(objective, is_top);
        let mut stage = Network {
            layers: vec![network.layers[i].clone()],
            variance_head: if is_top { network.variance_head.clone() } else { None },
        };
        let stage_cfg = TrainConfig {
            seed: if i == 0 {
                cfg.seed
            } else {
                Rng::new(cfg.seed).derive(&[STREAM_STAGE, i as u64]).seed()
            },
            ..cfg.clone()
        };
        let report = train_with_sink(&mut stage, &codes, &stage_obj, &stage_cfg, &mut |r| sink(i, r))?;
        stages.push(report);
        let Network {
            mut layers,
            variance_head,
        } = stage;
        let trained = layers.pop().expect("one layer");
        if !is_top {
            codes = trained.encode(&codes)?;
        }
        network.layers[i] = trained;
        if is_top {
            network.variance_head = variance_head;
        }
    }
    let fine_tune = if cfg.fine_tune_epochs > 0 {
        let ft_cfg = TrainConfig {
            max_epochs: cfg.fine_tune_epochs,
            ..cfg.clone()
        };
        Some(train_with_sink(&mut network, data, objective, &ft_cfg, &mut |r| {
            sink(n_layers, r)
        })?)
    } else {
        None
    };
    Ok(LayerwiseOutcome {
        network,
        stages,
        fine_tune,
    })
}

/// End-to-end or layerwise training from a fresh initialization, per
/// `cfg.layerwise`.
pub fn fit(sizes: &[usize], data: &Matrix, objective: &ObjectiveSpec, cfg: &TrainConfig) -> Result<(Network, Vec<RunReport>)> {
    if cfg.layerwise {
        let out = train_layerwise(sizes, data, objective, cfg)?;
        let mut reports = out.stages;
        reports.extend(out.fine_tune);
        Ok((out.network, reports))
    } else {
        let mut net = init_for(sizes, objective, cfg.seed)?;
        let report = train(&mut net, data, objective, cfg)?;
        Ok((net, vec![report]))
    }
}
