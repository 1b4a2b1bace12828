//! The `train`, `eval` and `sweep` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rae_core::evaluation::{alpha_sweep, cross_validate, eval_reports_csv, reconstruction_mse, EvalReport, SweepResult};
use rae_core::trainer::{init_for, train_layerwise_with_sink, train_with_sink, EpochRecord};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_file, RunManifest};

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub data_dir: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
}

impl Context {
    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub const EPOCH_CSV_HEADER: &str = "stage,epoch,total,data,relation,regularizer,kl,mean_loss";

fn epoch_row(out: &mut String, stage: usize, r: &EpochRecord) {
    let l = &r.loss;
    let _ = writeln!(
        out,
        "{stage},{},{},{},{},{},{},{}",
        r.epoch,
        l.total,
        l.data_term,
        l.relation_term,
        l.regularizer_term,
        l.kl_term,
        r.mean_loss()
    );
}

/// Trains one network; writes `model.ckpt`, `epochs.csv` and the manifest.
pub fn cmd_train(cfg: &Config, ctx: &Context, out: &Path) -> CliResult<()> {
    let ds = cfg.load_dataset(&ctx.data_dir)?;
    let sizes = cfg.layer_sizes(ds.dim())?;
    let objective = cfg.objective_spec()?;
    let train = cfg.train_config()?;
    let mut manifest = RunManifest::new("train", cfg, &ctx.data_dir, ctx.jobs)?;
    let ckpt = out.join("model.ckpt");
    let epochs_csv = out.join("epochs.csv");
    manifest.outputs = vec![ckpt.clone(), epochs_csv.clone()];
    manifest.write(out)?;

    ctx.log(format!(
        "training {} {:?} on {} samples ({} features)",
        objective.kind,
        sizes,
        ds.len(),
        ds.dim()
    ));
    let mut csv = format!("{EPOCH_CSV_HEADER}\n");
    let mut sink = |stage: usize, r: &EpochRecord| {
        epoch_row(&mut csv, stage, r);
        if !ctx.quiet && (r.epoch.is_multiple_of(10) || r.epoch == 1) {
            eprintln!("  stage {stage} epoch {:>4}  loss/sample/feature {:.6}", r.epoch, r.mean_loss());
        }
    };
    let result = if train.layerwise {
        train_layerwise_with_sink(&sizes, &ds.features, &objective, &train, &mut sink).map(|o| o.network)
    } else {
        init_for(&sizes, &objective, train.seed).and_then(|mut net| {
            train_with_sink(&mut net, &ds.features, &objective, &train, &mut |r| sink(0, r)).map(|_| net)
        })
    };
    // Epochs completed before a divergence are still worth keeping.
    write_file(&epochs_csv, csv.as_bytes())?;
    let net = result?;
    net.save(&ckpt)?;
    let mse = reconstruction_mse(&net, &ds.features)?;
    ctx.log(format!("training-set MSE {mse}"));
    println!("{}", ckpt.display());
    Ok(())
}

pub fn summarize(report: &EvalReport) -> String {
    format!(
        "{:<5} mse {:.6} ± {:.6}  error {:.4} ± {:.4}  ({} folds)",
        report.model,
        report.mse,
        report.mse_std,
        report.error,
        report.error_std,
        report.folds.len()
    )
}

/// k-fold evaluation; writes `eval.csv`, per-fold artifacts under
/// `folds/`, and the manifest.
pub fn cmd_eval(cfg: &Config, ctx: &Context, out: &Path) -> CliResult<EvalReport> {
    let ds = cfg.load_dataset(&ctx.data_dir)?;
    let pipeline = cfg.pipeline(ds.dim(), ctx.jobs)?;
    let mut manifest = RunManifest::new("eval", cfg, &ctx.data_dir, ctx.jobs)?;
    let csv_path = out.join("eval.csv");
    manifest.outputs = vec![csv_path.clone(), out.join("folds")];
    manifest.write(out)?;
    ctx.log(format!("cross-validating {} on {} samples", pipeline.objective.kind, ds.len()));
    let report = cross_validate(&ds, &pipeline, Some(&out.join("folds")))?;
    write_file(&csv_path, eval_reports_csv(std::slice::from_ref(&report)).as_bytes())?;
    println!("{}", summarize(&report));
    Ok(report)
}

/// Alpha sweep; writes `sweep.csv` and the manifest.
pub fn cmd_sweep(cfg: &Config, ctx: &Context, out: &Path) -> CliResult<SweepResult> {
    let objective = cfg.objective_spec()?;
    if !objective.kind.uses_alpha() {
        return Err(CliError::config(format!(
            "`objective.kind` {} has no alpha to sweep; use RAE, RSAE, RDAE, RVAE or SAE",
            objective.kind
        )));
    }
    let ds = cfg.load_dataset(&ctx.data_dir)?;
    let pipeline = cfg.pipeline(ds.dim(), ctx.jobs)?;
    let mut manifest = RunManifest::new("sweep", cfg, &ctx.data_dir, ctx.jobs)?;
    let csv_path = out.join("sweep.csv");
    manifest.outputs = vec![csv_path.clone()];
    manifest.write(out)?;
    ctx.log(format!("sweeping alpha for {} on {} samples", objective.kind, ds.len()));
    let sweep = alpha_sweep(&ds, &pipeline, cfg.sweep_split())?;
    write_file(&csv_path, sweep.to_csv().as_bytes())?;
    let (alpha, mse) = sweep.best();
    println!("best alpha {alpha} mse {mse}");
    for (name, v) in &sweep.baselines {
        println!("{name} mse {v}");
    }
    Ok(sweep)
}
