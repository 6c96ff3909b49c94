//! Datasets: IDX ingestion, synthetic Gaussian blobs, class-balanced halves
//! and seeded mini-batch iteration.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::calib::Batch;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, streams};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::data(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::data("dataset is empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::data(format!("label {bad} out of range for {num_classes} classes")));
        }
        if !features.is_finite() {
            return Err(Error::data("non-finite feature value"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
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

    /// Rows `idx`, in order.
    pub fn subset(&self, idx: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: name.into(),
        }
    }

    /// The first `n` samples of each class, keeping dataset order.
    pub fn take_per_class(&self, n: usize) -> Dataset {
        let mut seen = vec![0usize; self.num_classes];
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let y = self.labels[i];
                seen[y] += 1;
                seen[y] <= n
            })
            .collect();
        self.subset(&idx, format!("{}[{n}/class]", self.name))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let ctx = || format!("reading {}", path.display());
    let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
    let mut raw = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(ctx(), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(ctx(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxReader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let (head, rest) = self.take(4)?;
        self.buf = rest;
        Ok(u32::from_be_bytes(head.try_into().unwrap()))
    }

    fn take(&self, n: usize) -> Result<(&'a [u8], &'a [u8])> {
        if self.buf.len() < n {
            return Err(Error::io(
                format!("parsing {}", self.what),
                io::Error::new(io::ErrorKind::UnexpectedEof, "truncated IDX file"),
            ));
        }
        Ok(self.buf.split_at(n))
    }
}

/// Parses an IDX image file (`u8`, `[N, rows, cols]`), scaling pixels to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let mut r = IdxReader { buf: bytes, what: "IDX images" };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!("IDX images: bad magic {magic:#010x}")));
    }
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let d = rows * cols;
    let (pixels, _) = r.take(n * d)?;
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Matrix::new(n, d, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = IdxReader { buf: bytes, what: "IDX labels" };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!("IDX labels: bad magic {magic:#010x}")));
    }
    let n = r.u32()? as usize;
    let (labels, _) = r.take(n)?;
    Ok(labels.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair. Gzipped files are detected by content.
/// `K` is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let features = parse_idx_images(&open_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&open_maybe_gz(labels_path.as_ref())?)?;
    if features.rows() != labels.len() {
        return Err(Error::data(format!(
            "{} images but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(features, labels, k, name)
}

/// Unit-variance Gaussian clusters with class `k` centred at
/// `separation · e_k`, globally min-max rescaled to `[0, 1]`.
pub fn synthetic_blobs(k: usize, per_class_n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || per_class_n < 1 {
        return Err(Error::config("blobs need K >= 2 and at least one sample per class"));
    }
    if d < k {
        return Err(Error::config(format!("cannot place {k} class means on {d} axes")));
    }
    let mut rng = rng::stream(seed, streams::BLOBS);
    let n = k * per_class_n;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z + if j == y { separation } else { 0.0 });
        }
        labels.push(y);
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut data {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    Dataset::new(Matrix::new(n, d, data)?, labels, k, format!("blobs-k{k}-d{d}-s{separation}"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPair {
    pub part_a: Dataset,
    pub part_b: Dataset,
    /// Original indices behind each part, ascending.
    pub indices_a: Vec<usize>,
    pub indices_b: Vec<usize>,
}

/// Splits each class in half after a seeded shuffle; an odd extra sample
/// goes to `part_a`. Both parts keep the original sample order.
pub fn split_half_by_class(ds: &Dataset, seed: u64) -> Result<SplitPair> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut a = Vec::with_capacity(ds.len() / 2 + ds.num_classes);
    let mut b = Vec::with_capacity(ds.len() / 2);
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::data(format!("class {class} has fewer than 2 samples")));
        }
        idx.shuffle(&mut rng);
        let half = idx.len().div_ceil(2);
        a.extend_from_slice(&idx[..half]);
        b.extend_from_slice(&idx[half..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok(SplitPair {
        part_a: ds.subset(&a, format!("{}-a", ds.name)),
        part_b: ds.subset(&b, format!("{}-b", ds.name)),
        indices_a: a,
        indices_b: b,
    })
}

/// Sample order for one epoch, keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(rng::derive_seed(seed, epoch as u64), streams::SHUFFLE);
    order.shuffle(&mut rng);
    order
}

/// Mini-batches of one shuffled epoch; the last batch may be short.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(Batch {
            inputs: self.ds.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.ds.labels[i]).collect(),
            soft_labels: None,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

pub fn batch_iter(ds: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    Ok(BatchIter {
        ds,
        order: epoch_order(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}
