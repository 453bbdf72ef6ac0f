//! IDX image/label files, pixel scaling, and seeded mini-batching.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const DATA_DIR_ENV: &str = "AFKAN_DATA_DIR";

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Decoded IDX image file: `n` images of `rows x cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    /// Raw byte values as an `(n, rows * cols)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let width = self.rows * self.cols;
        Tensor::from_parts(
            vec![self.count(), width],
            self.pixels.iter().map(|&b| f64::from(b)).collect(),
        )
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            what: "image",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            what: "label",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        warn!("label file contains class {bad} outside 0..=9; passing it through");
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path)?)
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGE_MAGIC,
        images.count() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Divides raw byte intensities by 255. Refuses input that already looks scaled (max <= 1).
pub fn normalize_pixels(raw: &Tensor) -> Result<Tensor> {
    if raw.max_value() <= 1.0 {
        return Err(Error::invalid(
            "pixels already lie in [0, 1]; refusing to scale twice",
        ));
    }
    Ok(raw.map(|v| v / 255.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
}

impl DatasetKind {
    pub fn tag(&self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion_mnist",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion_mnist" => Ok(DatasetKind::FashionMnist),
            _ => Err(Error::UnknownTag {
                kind: "dataset",
                tag: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// `--data-dir` if given, else `$AFKAN_DATA_DIR`, else `data`.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::MissingData {
        path: plain,
        hint: format!(
            "place the official IDX files (optionally .gz) under {} or point --data-dir / {DATA_DIR_ENV} at their parent",
            dir.display()
        ),
    })
}

/// Scaled images and integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `(N, 784)` with entries in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rank() != 2 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "dataset",
                shape: images.shape().to_vec(),
                reason: format!("{} labels for these images", labels.len()),
            });
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    /// Loads `<root>/<kind>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub fn load(root: &Path, kind: DatasetKind, split: Split) -> Result<Self> {
        let dir = root.join(kind.tag());
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "t10k",
        };
        let images = load_idx_images(&locate(&dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let labels = load_idx_labels(&locate(&dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        if images.count() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.count(),
                labels.len()
            )));
        }
        let ds = Self::new(
            format!("{}-{prefix}", kind.tag()),
            normalize_pixels(&images.to_tensor())?,
            labels.into_iter().map(usize::from).collect(),
        )?;
        if kind == DatasetKind::FashionMnist && split == Split::Train {
            ds.check_balance(6_000);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                c[l] += 1;
            }
        }
        c
    }

    /// Warns and returns false when some class does not hold exactly `per_class` samples.
    pub fn check_balance(&self, per_class: usize) -> bool {
        let counts = self.class_counts(10);
        let ok = counts.iter().all(|&c| c == per_class);
        if !ok {
            warn!(
                "{}: class counts {counts:?} differ from {per_class} per class",
                self.name
            );
        }
        ok
    }

    /// Rows `idx` gathered into a batch.
    pub fn gather(&self, idx: &[usize]) -> Batch {
        let w = self.width();
        let src = self.images.data();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        Batch {
            images: Tensor::from_parts(vec![idx.len(), w], data),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Seeded shuffling schedule; the epoch selects an independent ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
}

impl BatchPlan {
    pub fn permutation(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        p
    }
}

/// Shuffled batches of one epoch; the final batch may be short.
pub fn make_batches<'a>(
    ds: &'a Dataset,
    plan: BatchPlan,
    epoch: usize,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if plan.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let perm = plan.permutation(ds.len(), epoch);
    let chunks: Vec<Vec<usize>> = perm.chunks(plan.batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |c| ds.gather(&c)))
}
