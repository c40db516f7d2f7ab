//! Datasets: IDX decoding, synthetic blob tasks and replicate-over-time
//! encoding.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::TruncatedFile {
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn body(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[header..expected])
}

impl IdxImages {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, IDX_IMAGES_MAGIC)?;
        let count = be_u32(bytes, 4)? as usize;
        let rows = be_u32(bytes, 8)? as usize;
        let cols = be_u32(bytes, 12)? as usize;
        let pixels = body(bytes, 16, count * rows * cols)?.to_vec();
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        for v in [IDX_IMAGES_MAGIC, self.count as u32, self.rows as u32, self.cols as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Raw contents of an IDX label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        check_magic(bytes, IDX_LABELS_MAGIC)?;
        let count = be_u32(bytes, 4)? as usize;
        Ok(Self {
            labels: body(bytes, 8, count)?.to_vec(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// Labelled samples with a common per-sample shape, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Per-sample shape, e.g. `[1, 28, 28]`.
    pub shape: Vec<usize>,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(shape: &[usize], images: Vec<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::DimensionMismatch {
                images: images.len().checked_div(per).unwrap_or(0),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ClassOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            images,
            labels,
            classes,
        })
    }

    /// Pixels scaled from bytes to `[0, 1]`; one channel.
    pub fn from_idx(images: &IdxImages, labels: &IdxLabels, classes: usize) -> Result<Self> {
        if images.count != labels.labels.len() {
            return Err(Error::DimensionMismatch {
                images: images.count,
                labels: labels.labels.len(),
            });
        }
        Self::new(
            &[1, images.rows, images.cols],
            images.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
            labels.labels.iter().map(|&l| usize::from(l)).collect(),
            classes,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_elems(&self) -> usize {
        self.shape.iter().product()
    }

    /// Samples `idx` as `[B, ...shape]` plus their labels.
    pub fn batch<F: Scalar>(&self, idx: &[usize]) -> (Tensor<F>, Vec<usize>) {
        let per = self.sample_elems();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend(
                self.images[i * per..(i + 1) * per]
                    .iter()
                    .map(|&v| F::from_f64(f64::from(v))),
            );
        }
        let mut shape = alloc::vec![idx.len()];
        shape.extend_from_slice(&self.shape);
        (
            Tensor::from_vec(&shape, data).unwrap(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per = self.sample_elems();
        Self {
            shape: self.shape.clone(),
            images: self.images[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// Splits off the first `n` samples: `(first n, rest)`.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let per = self.sample_elems();
        let rest = Self {
            shape: self.shape.clone(),
            images: self.images[n * per..].to_vec(),
            labels: self.labels[n..].to_vec(),
            classes: self.classes,
        };
        (self.head(n), rest)
    }

    /// Sample order of epoch `epoch` (0-based) for run seed `seed`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        Rng::new(seed)
            .split(streams::SHUFFLE)
            .split(epoch)
            .permutation(self.len())
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = alloc::vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// `T` identical frames of `frame`; spikes are produced by the network's
/// encoding layer.
pub fn replicate_encode<F: Scalar>(frame: &Tensor<F>, timesteps: usize) -> Vec<Tensor<F>> {
    (0..timesteps).map(|_| frame.clone()).collect()
}

/// Gaussian blob classification task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlobSpec {
    pub classes: usize,
    pub samples: usize,
    /// Per-sample shape.
    pub shape: Vec<usize>,
    /// Standard deviation of samples around their class centre.
    pub spread: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            samples: 200,
            shape: alloc::vec![1, 4, 4],
            spread: 0.1,
        }
    }
}

/// Deterministic blob dataset: class centres uniform in `[0.1, 0.9]`,
/// samples clamped to `[0, 1]`, class counts balanced within one.
pub fn synth_tasks(seed: u64, spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes == 0 {
        return Err(Error::InvalidConfig("blob task needs at least one class".into()));
    }
    let mut rng = Rng::new(seed).split(streams::DATA);
    let per: usize = spec.shape.iter().product();
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..per).map(|_| 0.1 + 0.8 * rng.uniform()).collect())
        .collect();
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let mut images = Vec::with_capacity(spec.samples * per);
    for &y in &labels {
        for &c in &centres[y] {
            let v = c + spec.spread * rng.normal();
            images.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(&spec.shape, images, labels, spec.classes)
}
