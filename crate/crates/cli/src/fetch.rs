//! Downloads the public datasets from their canonical locations and checks
//! them against pinned MD5 digests.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use md5::{Digest, Md5};

use crate::commands::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Remote {
    pub dataset: &'static str,
    pub url: &'static str,
    pub md5: &'static str,
}

pub const REMOTES: [Remote; 5] = [
    Remote {
        dataset: "mnist",
        url: "http://yann.lecun.com/exdb/mnist/train-images-idx3-ubyte.gz",
        md5: "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    },
    Remote {
        dataset: "mnist",
        url: "http://yann.lecun.com/exdb/mnist/train-labels-idx1-ubyte.gz",
        md5: "d53e105ee54ea40749a09fcbcd1e9432",
    },
    Remote {
        dataset: "mnist",
        url: "http://yann.lecun.com/exdb/mnist/t10k-images-idx3-ubyte.gz",
        md5: "9fb629c4189551a2d022fa330f9573f3",
    },
    Remote {
        dataset: "mnist",
        url: "http://yann.lecun.com/exdb/mnist/t10k-labels-idx1-ubyte.gz",
        md5: "ec29112dd5afa0611ce80d1b7f02629c",
    },
    Remote {
        dataset: "cifar10",
        url: "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
        md5: "c32a1d4ab5d03f1284b67883e8d87530",
    },
];

impl Remote {
    pub fn file_name(&self) -> &'static str {
        self.url.rsplit('/').next().expect("url has a path")
    }

    /// The URL with its directory replaced by `base`, for mirrors.
    pub fn url_with_base(&self, base: Option<&str>) -> String {
        match base {
            Some(b) => format!("{}/{}", b.trim_end_matches('/'), self.file_name()),
            None => self.url.to_string(),
        }
    }
}

pub fn md5_hex(bytes: &[u8]) -> String {
    hex(&Md5::digest(bytes))
}

pub fn verify(bytes: &[u8], remote: &Remote, origin: &str) -> CliResult<()> {
    let got = md5_hex(bytes);
    if got != remote.md5 {
        return Err(CliError::data(format!(
            "{origin}: MD5 {got} does not match pinned {}",
            remote.md5
        )));
    }
    Ok(())
}

fn download(url: &str) -> CliResult<Vec<u8>> {
    let mut body = ureq::get(url)
        .call()
        .map_err(|e| CliError::data(format!("{url}: {e}")))?
        .into_body();
    let mut bytes = Vec::new();
    body.as_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::data(format!("{url}: {e}")))?;
    Ok(bytes)
}

fn unpack_tar_gz(bytes: &[u8], dir: &Path) -> CliResult<()> {
    tar::Archive::new(GzDecoder::new(bytes))
        .unpack(dir)
        .map_err(|e| CliError::data(format!("cannot unpack into {}: {e}", dir.display())))
}

/// Fetches `dataset` (`mnist`, `cifar10` or `all`) into
/// `<data dir>/<dataset>/`, skipping files already present with the
/// pinned digest. Archives are unpacked next to themselves.
pub fn fetch(dataset: &str, base_url: Option<&str>, ctx: &Context) -> CliResult<Vec<PathBuf>> {
    if !["mnist", "cifar10", "all"].contains(&dataset) {
        return Err(CliError::config(format!(
            "`--dataset` must be mnist, cifar10 or all, got {dataset:?}"
        )));
    }
    let mut written = Vec::new();
    for remote in REMOTES.iter().filter(|r| dataset == "all" || r.dataset == dataset) {
        let dir = ctx.data_dir.join(remote.dataset);
        fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(remote.file_name());
        let existing = fs::read(&path).ok().filter(|b| md5_hex(b) == remote.md5);
        let bytes = match existing {
            Some(b) => {
                ctx.log(format!("{} already present", path.display()));
                b
            }
            None => {
                let url = remote.url_with_base(base_url);
                ctx.log(format!("downloading {url}"));
                let bytes = download(&url)?;
                verify(&bytes, remote, &url)?;
                crate::manifest::write_file(&path, &bytes)?;
                bytes
            }
        };
        if path.extension().is_some_and(|e| e == "gz") && remote.file_name().ends_with(".tar.gz") {
            unpack_tar_gz(&bytes, &dir)?;
        }
        written.push(path);
    }
    // Fail early on files that exist but do not verify.
    for path in &written {
        let mut f = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut b = Vec::new();
        f.read_to_end(&mut b).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let remote = REMOTES.iter().find(|r| path.ends_with(r.file_name())).expect("known file");
        verify(&b, remote, &path.display().to_string())?;
    }
    Ok(written)
}
