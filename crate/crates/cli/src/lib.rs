//! The `rae` command-line tool.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
//! divergence.

pub mod commands;
pub mod config;
pub mod error;
pub mod fetch;
pub mod manifest;
pub mod reproduce;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{cmd_eval, cmd_sweep, cmd_train, Context};
use crate::config::Config;
use crate::error::CliResult;

pub const DATA_DIR_ENV: &str = "RAE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "rae", version, about = "Train and evaluate relational autoencoders")]
pub struct Cli {
    /// Root for relative data paths [env: RAE_DATA_DIR] [default: data]
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Worker threads for independent folds and sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one autoencoder and save its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold reconstruction and classification evaluation.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep alpha over 0, 0.02, ..., 1 with BAE and GAE baselines.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canned protocol: `table1` or `fig2`.
    Reproduce {
        target: String,
        /// `desk` (bundled sample, minutes) or `full` (official data).
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Replace the preset with this config or manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/reproduce")]
        out: PathBuf,
        /// Print the preset configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Download MNIST and/or CIFAR-10 and verify their checksums.
    FetchData {
        #[arg(long, default_value = "all")]
        dataset: String,
        /// Mirror directory replacing the canonical URL's directory.
        #[arg(long)]
        base_url: Option<String>,
    },
}

fn data_dir(cli: &Cli) -> PathBuf {
    cli.data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn execute(cli: &Cli) -> CliResult<()> {
    let ctx = Context {
        data_dir: data_dir(cli),
        jobs: cli.jobs.max(1),
        quiet: cli.quiet,
    };
    let out_dir = |cfg: &Config, out: &Option<PathBuf>| out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match &cli.command {
        Command::Train { config, out } => {
            let cfg = Config::load(config)?;
            cmd_train(&cfg, &ctx, &out_dir(&cfg, out))
        }
        Command::Eval { config, out } => {
            let cfg = Config::load(config)?;
            cmd_eval(&cfg, &ctx, &out_dir(&cfg, out)).map(|_| ())
        }
        Command::Sweep { config, out } => {
            let cfg = Config::load(config)?;
            cmd_sweep(&cfg, &ctx, &out_dir(&cfg, out)).map(|_| ())
        }
        Command::Reproduce {
            target,
            scale,
            config,
            out,
            print_config,
        } => {
            if *print_config {
                print!("{}", reproduce::preset(scale)?.to_toml());
                return Ok(());
            }
            let override_cfg = config.as_deref().map(Config::load).transpose()?;
            reproduce::reproduce(target, scale, override_cfg, &ctx, out)
        }
        Command::FetchData { dataset, base_url } => {
            for path in fetch::fetch(dataset, base_url.as_deref(), &ctx)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
