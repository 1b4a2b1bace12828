//! MNIST IDX and CIFAR-10 binary loaders, subsetting, splits and CSV
//! interchange. Pixels are scaled to [0, 1] by 1/255.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const NUM_CLASSES: usize = 10;
pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..=9")));
        }
        if features.as_slice().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("features must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
        }
    }
}

/// Opens `path`, transparently gunzipping when the file starts with the
/// gzip magic bytes.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("corrupt gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// An IDX file: dimension sizes and the raw unsigned-byte payload.
struct Idx {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn parse_idx(path: &Path, bytes: &[u8], magic: u32) -> Result<Idx> {
    let mut cur = bytes;
    let found = cur
        .read_u32::<BigEndian>()
        .map_err(|_| Error::format(path, "truncated header"))?;
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let d = cur
            .read_u32::<BigEndian>()
            .map_err(|_| Error::format(path, "truncated header"))?;
        dims.push(d as usize);
    }
    let expected: usize = dims.iter().product();
    if cur.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated file: {} payload bytes, expected {expected}", cur.len()),
        ));
    }
    if cur.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", cur.len() - expected),
        ));
    }
    Ok(Idx {
        dims,
        data: cur.to_vec(),
    })
}

fn scale_pixels(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// Loads an IDX image/label pair (gzip or raw). Images become rows of
/// `rows * cols` pixels.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx(images_path, &read_maybe_gz(images_path)?, MNIST_IMAGE_MAGIC)?;
    let labels = parse_idx(labels_path, &read_maybe_gz(labels_path)?, MNIST_LABEL_MAGIC)?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::format(
            labels_path,
            format!("{} labels for {} images", labels.dims[0], n),
        ));
    }
    if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::format(labels_path, format!("label {bad} outside 0..=9")));
    }
    let m = images.dims[1] * images.dims[2];
    let features = Matrix::from_vec(n, m, scale_pixels(&images.data))?;
    Ok(Dataset {
        features,
        labels: labels.data,
        name: "mnist".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn first_existing(dir: &Path, names: &[String]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| {
            Error::io(
                dir.join(&names[0]),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            )
        })
}

/// Image/label paths of an MNIST split inside `dir`, accepting the
/// official names with or without `.gz`.
pub fn mnist_paths(dir: &Path, split: Split) -> Result<(PathBuf, PathBuf)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let variants = |kind: &str, idx: &str| {
        vec![
            format!("{prefix}-{kind}-{idx}-ubyte"),
            format!("{prefix}-{kind}-{idx}-ubyte.gz"),
            format!("{prefix}-{kind}.{idx}-ubyte"),
        ]
    };
    Ok((
        first_existing(dir, &variants("images", "idx3"))?,
        first_existing(dir, &variants("labels", "idx1"))?,
    ))
}

pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir, split)?;
    load_mnist(&images, &labels)
}

/// Concatenates CIFAR-10 binary batches. Channels stay in file order
/// (red plane, green plane, blue plane).
pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<Dataset> {
    if batch_paths.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR-10 batch files given".into()));
    }
    let mut files = Vec::with_capacity(batch_paths.len());
    for path in batch_paths {
        let bytes = read_maybe_gz(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::format(
                path,
                format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
            ));
        }
        files.push((path, bytes));
    }
    // Sized up front: the full training set is 1.2 GB as f64.
    let total: usize = files.iter().map(|(_, b)| b.len() / CIFAR_RECORD).sum();
    let mut labels = Vec::with_capacity(total);
    let mut pixels = Vec::with_capacity(total * CIFAR_PIXELS);
    for (path, bytes) in files {
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            if record[0] as usize >= NUM_CLASSES {
                return Err(Error::format(path, format!("label {} outside 0..=9", record[0])));
            }
            labels.push(record[0]);
            pixels.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    Ok(Dataset {
        features: Matrix::from_vec(n, CIFAR_PIXELS, pixels)?,
        labels,
        name: "cifar10".into(),
    })
}

/// Batch files of a CIFAR-10 split in `dir` or its `cifar-10-batches-bin`
/// subdirectory.
pub fn cifar10_paths(dir: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let nested = dir.join("cifar-10-batches-bin");
    let base = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    names
        .iter()
        .map(|n| first_existing(&base, std::slice::from_ref(n)))
        .collect()
}

pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<Dataset> {
    load_cifar10(&cifar10_paths(dir, split)?)
}

/// Per-class sample counts for a stratified draw of `n` from `counts`:
/// floors of the proportional shares, with the remainder going to the
/// largest fractional parts (lowest class first on ties).
pub fn stratified_quota(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quota: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Remainders compared exactly as (c * n) mod total.
    order.sort_by_key(|&k| std::cmp::Reverse((counts[k] * n) % total));
    let mut left = n - quota.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[k] < counts[k] {
            quota[k] += 1;
            left -= 1;
        }
    }
    quota
}

/// Deterministic stratified sample of `n` rows, returned in shuffled order.
pub fn subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "subset of {n} requested from {} samples",
            ds.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let quota = stratified_quota(&ds.class_counts(), n);
    let mut chosen = Vec::with_capacity(n);
    for (class, &q) in quota.iter().enumerate() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] as usize == class).collect();
        rng.shuffle(&mut members);
        chosen.extend_from_slice(&members[..q]);
    }
    rng.shuffle(&mut chosen);
    Ok(ds.select(&chosen))
}

/// A train/test index split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over a seeded permutation of `0..n`; test folds partition the
/// indices and differ in size by at most one.
pub fn kfold_splits(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "k-fold needs 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let perm = Rng::new(seed).permutation(n);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test = perm[start..start + size].to_vec();
        let train = perm[..start].iter().chain(&perm[start + size..]).copied().collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Writes `label,f0,...,f{m-1}` followed by one row per sample. Floats use
/// the shortest representation that round-trips.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("label");
    for j in 0..ds.dim() {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..ds.len() {
        let mut line = ds.labels[i].to_string();
        for v in ds.features.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_csv(path: &Path, name: &str) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"label") || cols[1..].iter().enumerate().any(|(j, c)| *c != format!("f{j}")) {
        return Err(Error::format(path, "header must be label,f0,...,f{m-1}"));
    }
    let m = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", lineno + 2));
        let mut fields = line.split(',');
        let label: u8 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad label"))?;
        labels.push(label);
        let before = values.len();
        for f in fields {
            values.push(f.parse::<f64>().map_err(|_| bad("bad float"))?);
        }
        if values.len() - before != m {
            return Err(bad("wrong field count"));
        }
    }
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, m, values)?, labels, name)
}
