//! Run manifests: everything needed to repeat a run, written once before
//! training starts.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileChecksum {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// The command line, e.g. `sweep` or `reproduce fig2 --scale desk`.
    pub command: String,
    pub config: Config,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub datasets: Vec<FileChecksum>,
    pub outputs: Vec<PathBuf>,
    pub jobs: usize,
    pub started_at: String,
}

pub fn sha256_file(path: &Path) -> CliResult<FileChecksum> {
    let mut file =
        File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileChecksum {
        path: path.to_path_buf(),
        bytes,
        sha256: hex(&hasher.finalize()),
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &Config, data_dir: &Path, jobs: usize) -> CliResult<Self> {
        let datasets = config
            .data_files(data_dir)?
            .iter()
            .map(|p| sha256_file(p))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(RunManifest {
            tool: "rae",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            config: config.clone(),
            seed: config.train.seed,
            data_dir: data_dir.to_path_buf(),
            datasets,
            outputs: Vec::new(),
            jobs,
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    /// Writes `manifest.json` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(contents))
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
