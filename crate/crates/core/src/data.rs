//! Datasets: MNIST IDX files, sequential (1D) variants, synthetic images and batching.
//!
//! Loaders return pixels scaled to `[0, 1]`. [`standardize_pair`] then
//! z-scores both splits with the train split's statistics.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Seed of the fixed pixel permutation used for pMNIST.
pub const PMNIST_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]` or `[N, C, L]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Position permutation applied by [`to_sequential`], if any:
    /// output index `i` holds input pixel `permutation[i]`.
    pub permutation: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.rank() < 3 || images.shape()[0] != labels.len() {
            return Err(Error::Format(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label: l, classes: num_classes });
        }
        Ok(Dataset { images, labels, num_classes, split, permutation: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one sample, e.g. `[1, 28, 28]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let rows: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.select_rows(&rows),
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        }
    }

    /// Samples at `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            images: Tensor::zeros(&[1]),
            labels: Vec::new(),
            num_classes: self.num_classes,
            split: self.split,
            permutation: self.permutation.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Reads an IDX image/label pair. Images come back as `[N, 1, H, W]` in `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_maybe_gz(ip)?;
    let lab = read_maybe_gz(lp)?;
    let iname = ip.display().to_string();
    let lname = lp.display().to_string();

    let magic = be_u32(&img, 0, &iname)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("{iname}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(&lab, 0, &lname)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!("{lname}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(&img, 4, &iname)? as usize;
    let (h, w) = (be_u32(&img, 8, &iname)? as usize, be_u32(&img, 12, &iname)? as usize);
    let nl = be_u32(&lab, 4, &lname)? as usize;
    if n != nl {
        return Err(Error::Format(format!("count mismatch: {n} images vs {nl} labels")));
    }
    let pixels = img.get(16..16 + n * h * w).ok_or_else(|| {
        Error::Format(format!("{iname}: truncated, expected {} pixel bytes, found {}", n * h * w, img.len() - 16))
    })?;
    let labels = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::Format(format!("{lname}: truncated, expected {n} labels, found {}", lab.len() - 8)))?;
    let data = pixels.iter().map(|&p| p as Scalar / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(Tensor::new(&[n, 1, h, w], data)?, labels, classes, Split::Train)
}

/// Train/test caps for [`load_mnist`]; `None` keeps the whole split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub train: Option<usize>,
    pub test: Option<usize>,
}

/// Loads the four standard MNIST files from `dir` (gzipped or not), keeps
/// the first samples of each split per `limits`, and standardizes both with
/// train statistics.
pub fn load_mnist(dir: impl AsRef<Path>, limits: Limits) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        for name in [format!("{stem}.gz"), stem.to_string()] {
            let p = dir.join(name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{stem}[.gz] not found in {}", dir.display()),
        )))
    };
    let mut train = load_idx(find("train-images-idx3-ubyte")?, find("train-labels-idx1-ubyte")?)?;
    let mut test = load_idx(find("t10k-images-idx3-ubyte")?, find("t10k-labels-idx1-ubyte")?)?;
    test.split = Split::Test;
    if let Some(n) = limits.train {
        train = train.take(n);
    }
    if let Some(n) = limits.test {
        test = test.take(n);
    }
    standardize_pair(&mut train, &mut test);
    Ok((train, test))
}

/// Scalar mean and standard deviation over every pixel of a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Scalar,
    pub std: Scalar,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.images.data();
        let n = d.len().max(1) as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        Normalizer { mean: mean as Scalar, std: var.sqrt().max(1e-12) as Scalar }
    }

    pub fn apply(&self, ds: &mut Dataset) {
        let (m, s) = (self.mean, self.std);
        ds.images = ds.images.map(|v| (v - m) / s);
    }
}

/// Standardizes both splits with statistics of `train` only.
pub fn standardize_pair(train: &mut Dataset, test: &mut Dataset) -> Normalizer {
    let norm = Normalizer::fit(train);
    norm.apply(train);
    norm.apply(test);
    norm
}

/// The fixed permutation of `n` positions drawn from `seed`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

pub fn inverse_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Reorders the last axis of every sample: output position `i` takes input position `perm[i]`.
pub fn permute_positions(images: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let s = images.shape();
    let l = *s.last().expect("rank checked by caller");
    if perm.len() != l {
        return Err(Error::InvalidArgument(format!("permutation of {} positions for length {l}", perm.len())));
    }
    let mut out = Vec::with_capacity(images.numel());
    for row in images.data().chunks_exact(l) {
        out.extend(perm.iter().map(|&j| row[j]));
    }
    Tensor::new(s, out)
}

/// Flattens `[N, C, H, W]` row-major into `[N, C, H·W]`; with a seed, one
/// fixed permutation of the positions is applied to every image.
pub fn to_sequential(ds: &Dataset, permutation_seed: Option<u64>) -> Result<Dataset> {
    let s = ds.images.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "to_sequential expects [N, C, H, W]".into() });
    }
    let flat = ds.images.reshape(&[s[0], s[1], s[2] * s[3]])?;
    let (images, perm) = match permutation_seed {
        Some(seed) => {
            let p = permutation(s[2] * s[3], seed);
            (permute_positions(&flat, &p)?, Some(p))
        }
        None => (flat, None),
    };
    Ok(Dataset { images, labels: ds.labels.clone(), num_classes: ds.num_classes, split: ds.split, permutation: perm })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Two classes: horizontal vs vertical sinusoidal stripes.
    Stripes,
    /// Four classes: a Gaussian blob in one of the four quadrants.
    Blobs,
}

impl SyntheticKind {
    pub fn num_classes(self) -> usize {
        match self {
            SyntheticKind::Stripes => 2,
            SyntheticKind::Blobs => 4,
        }
    }
}

pub const SYNTHETIC_SIDE: usize = 8;

/// `n` seeded `[1, 8, 8]` images in `[0, 1]` with balanced labels `i mod classes`.
pub fn synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    let k = kind.num_classes();
    if n < k {
        return Err(Error::InvalidArgument(format!("synthetic {kind:?} needs at least {k} samples")));
    }
    let side = SYNTHETIC_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * side * side);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    for &label in &labels {
        match kind {
            SyntheticKind::Stripes => {
                let period: Scalar = rng.random_range(2.5..4.0);
                let phase: Scalar = rng.random_range(0.0..std::f64::consts::TAU as Scalar);
                for r in 0..side {
                    for c in 0..side {
                        let t = if label == 0 { r } else { c } as Scalar;
                        let v = 0.5 + 0.4 * (std::f64::consts::TAU as Scalar * t / period + phase).sin();
                        data.push((v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
                    }
                }
            }
            SyntheticKind::Blobs => {
                let half = side as Scalar / 2.0;
                let cy = (label / 2) as Scalar * half + rng.random_range(1.0..half - 1.0);
                let cx = (label % 2) as Scalar * half + rng.random_range(1.0..half - 1.0);
                let sigma: Scalar = rng.random_range(0.8..1.4);
                for r in 0..side {
                    for c in 0..side {
                        let d2 = (r as Scalar - cy).powi(2) + (c as Scalar - cx).powi(2);
                        let v = (-d2 / (2.0 * sigma * sigma)).exp();
                        data.push((v + rng.random_range(0.0..0.05)).clamp(0.0, 1.0));
                    }
                }
            }
        }
    }
    Dataset::new(Tensor::new(&[n, 1, side, side], data)?, labels, k, Split::Train)
}

/// Shuffled minibatches of one epoch; the final partial batch is kept.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

/// Iterates `ds` in an order fixed by `shuffle_seed` (`None` keeps file order).
pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches { ds, order, batch_size, pos: 0 }
}

impl Batches<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = &self.order[self.pos..end];
        self.pos = end;
        let x = self.ds.images.select_rows(rows);
        Some((x, rows.iter().map(|&r| self.ds.labels[r]).collect()))
    }
}
