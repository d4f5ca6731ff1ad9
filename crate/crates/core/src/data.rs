//! Datasets: IDX loading, synthetic blobs, low-data subsampling, and batching.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, streams, SplitMix64};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    image_dims: Vec<usize>,
}

impl Dataset {
    /// `images` must be `[N, D]`; every label must be below `num_classes`.
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len(), shape.iter().skip(1).product()],
                found: shape.to_vec(),
            });
        }
        if shape[0] != labels.len() {
            return Err(Error::CountMismatch {
                images: shape[0],
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        let image_dims = vec![shape[1]];
        Ok(Self {
            images,
            labels,
            num_classes,
            image_dims,
        })
    }

    fn with_image_dims(mut self, dims: Vec<usize>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), self.dim());
        self.image_dims = dims;
        self
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Features per example.
    pub fn dim(&self) -> usize {
        self.images.shape()[1]
    }

    /// Per-example dimensions as stored on disk, e.g. `[28, 28]`.
    pub fn image_dims(&self) -> &[usize] {
        &self.image_dims
    }

    /// Copy the listed rows, in order, into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let dim = self.dim();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        Dataset {
            images: Tensor::new(data, vec![indices.len(), dim]).expect("row gather keeps shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image_dims: self.image_dims.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetMissing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::TruncatedFile(format!("{}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{}: header cut short", path.display())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| {
        Error::TruncatedFile(format!(
            "{}: expected {len} data bytes, found {}",
            path.display(),
            bytes.len().saturating_sub(header)
        ))
    })
}

/// Parse an image/label IDX pair, gzip-compressed or raw. Pixels are scaled by 1/255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_maybe_gz(ip)?;
    let lab = read_maybe_gz(lp)?;

    check_magic(&img, IMAGES_MAGIC, ip)?;
    let n = be_u32(&img, 4, ip)? as usize;
    let rows = be_u32(&img, 8, ip)? as usize;
    let cols = be_u32(&img, 12, ip)? as usize;

    check_magic(&lab, LABELS_MAGIC, lp)?;
    let n_labels = be_u32(&lab, 4, lp)? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    let dim = rows * cols;
    let pixels = payload(&img, 16, n * dim, ip)?;
    let labels: Vec<usize> = payload(&lab, 8, n, lp)?.iter().map(|&b| b as usize).collect();
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Ok(Dataset::new(Tensor::new(data, vec![n, dim])?, labels, num_classes)?
        .with_image_dims(vec![rows, cols]))
}

/// Inverse of [`load_idx`]; pixel values are rounded back to bytes.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    gzip: bool,
) -> Result<()> {
    let (rows, cols) = match ds.image_dims() {
        [r, c] => (*r, *c),
        _ => (1, ds.dim()),
    };
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [ds.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(
        ds.images
            .data()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );

    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let byte = u8::try_from(l).map_err(|_| Error::InvalidLabel {
            label: l,
            num_classes: 256,
        })?;
        lab.push(byte);
    }

    write_bytes(images_path.as_ref(), &img, gzip)?;
    write_bytes(labels_path.as_ref(), &lab, gzip)
}

fn write_bytes(path: &Path, bytes: &[u8], gzip: bool) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = fs::File::create(path).map_err(io)?;
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(io)?;
        enc.finish().map_err(io)?;
    } else {
        let mut file = file;
        file.write_all(bytes).map_err(io)?;
    }
    Ok(())
}

/// Standard file names, with or without `.gz`.
pub fn idx_pair(dir: &Path, prefix: &str) -> (PathBuf, PathBuf) {
    let pick = |stem: String| {
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(stem)
        }
    };
    (
        pick(format!("{prefix}-images-idx3-ubyte")),
        pick(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Load `(train, test)` from a directory in the usual MNIST layout.
pub fn load_idx_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let (ti, tl) = idx_pair(dir, "train");
    let (ei, el) = idx_pair(dir, "t10k");
    Ok((load_idx(ti, tl)?, load_idx(ei, el)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(fraction: f64, seed: u64) -> Self {
        Self {
            fraction,
            seed,
            stratified: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidFraction(self.fraction));
        }
        Ok(())
    }
}

fn take_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).floor() as usize
}

/// Keep `floor(fraction * N)` examples chosen by a seeded shuffle.
///
/// The stratified variant applies the floor per class instead.
pub fn subsample(ds: &Dataset, spec: &SplitSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SplitMix64::new(derive_seed(spec.seed, streams::SPLIT));
    let indices = if spec.stratified {
        let mut by_class = vec![Vec::new(); ds.num_classes];
        for (i, &l) in ds.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let mut picked = Vec::new();
        for mut class in by_class {
            rng.shuffle(&mut class);
            class.truncate(take_count(spec.fraction, class.len()));
            picked.extend(class);
        }
        rng.shuffle(&mut picked);
        picked
    } else {
        let mut perm = rng.permutation(ds.len());
        perm.truncate(take_count(spec.fraction, ds.len()));
        perm
    };
    if indices.is_empty() {
        return Err(Error::InvalidFraction(spec.fraction));
    }
    Ok(ds.select(&indices))
}

/// Isotropic Gaussian clusters around fixed class means.
///
/// Means are drawn once from a constant stream, uniform in `[0, 1]^dim`, so they do
/// not depend on `seed`; `seed` drives the noise and the example order.
pub fn synthetic_gaussian_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic blobs need non-zero classes, examples and dimension".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!("spread {spread} must be finite and >= 0")));
    }
    let mut mean_rng = SplitMix64::new(0x5EED_B10B);
    let means: Vec<f64> = (0..num_classes * dim).map(|_| mean_rng.next_f64()).collect();

    let mut rng = SplitMix64::new(seed);
    let n = num_classes * per_class;
    let order = rng.permutation(n);
    let mut data = vec![0.0; n * dim];
    let mut labels = vec![0; n];
    for slot in 0..n {
        let class = order[slot] % num_classes;
        labels[slot] = class;
        let mu = &means[class * dim..(class + 1) * dim];
        for (x, m) in data[slot * dim..(slot + 1) * dim].iter_mut().zip(mu) {
            *x = m + spread * rng.normal();
        }
    }
    Dataset::new(Tensor::new(data, vec![n, dim])?, labels, num_classes)
}

/// Example order for one epoch: Fisher-Yates seeded with `seed ^ epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    SplitMix64::new(derive_seed(seed, streams::ORDER) ^ epoch as u64).permutation(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Shuffled mini-batches covering every example once; the last batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batch_iterator(ds: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    Ok(Batches {
        ds,
        order: epoch_order(ds.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let sub = self.ds.select(&self.order[self.pos..end]);
        self.pos = end;
        Some(Batch {
            images: sub.images,
            labels: sub.labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}
