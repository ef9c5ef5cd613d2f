//! MNIST IDX ingestion, label embedding and positive/negative synthesis.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qtensor::RealTensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

/// Environment variable naming the directory that holds the four MNIST files.
pub const DATA_DIR_ENV: &str = "FFINT8_MNIST_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// Intensities in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarSample {
    pub vector: Vec<f32>,
    pub polarity: Polarity,
    pub true_label: u8,
    pub embedded_label: u8,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::TruncatedFile {
                path: path.to_path_buf(),
                detail: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile {
            path: path.to_path_buf(),
            detail: "header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Raw image bytes and geometry `(count, rows, cols)`.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("need {need} bytes, have {}", bytes.len()),
        });
    }
    Ok((bytes[16..need].to_vec(), count, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + count {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            detail: format!("need {} bytes, have {}", 8 + count, bytes.len()),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledImage>> {
    let (pixels, count, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange(bad as usize));
    }
    let size = rows * cols;
    Ok(pixels
        .chunks_exact(size.max(1))
        .take(count)
        .zip(labels)
        .map(|(px, label)| LabeledImage {
            pixels: px.iter().map(|&p| p as f32 / 255.0).collect(),
            label,
        })
        .collect())
}

/// Serializes images to IDX bytes (pixels rounded back to `u8`).
pub fn encode_idx_images(images: &[LabeledImage], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        out.extend(img.pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    out
}

pub fn encode_idx_labels(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + images.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend(images.iter().map(|i| i.label));
    out
}

/// Training and test images.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

fn existing(dir: &Path, stem: &str) -> PathBuf {
    for name in [stem.to_string(), format!("{stem}.gz"), stem.replacen("-idx", ".idx", 1)] {
        let p = dir.join(&name);
        if p.exists() {
            return p;
        }
    }
    dir.join(stem)
}

/// Loads one standard MNIST split from `dir`, accepting plain or `.gz` files.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let (img, lab) = split.stems();
    load_mnist(&existing(dir, img), &existing(dir, lab))
}

/// Dataset root: `$FFINT8_MNIST_DIR` if set, otherwise `fallback`.
pub fn data_dir(fallback: &Path) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| fallback.to_path_buf())
}

/// Copies the pixels and overwrites slots `0..10` with a one-hot `label`.
pub fn embed_label(image: &LabeledImage, label: usize) -> Result<Vec<f32>> {
    let mut v = image.pixels.clone();
    embed_into(&mut v, label)?;
    Ok(v)
}

pub(crate) fn embed_into(v: &mut [f32], label: usize) -> Result<()> {
    if label >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange(label));
    }
    if v.len() < NUM_CLASSES {
        return Err(Error::Shape(format!(
            "input width {} cannot hold a {NUM_CLASSES}-slot label embedding",
            v.len()
        )));
    }
    v[..NUM_CLASSES].fill(0.0);
    v[label] = 1.0;
    Ok(())
}

/// Uniform draw among the nine labels different from `true_label`.
pub fn wrong_label<R: Rng + ?Sized>(true_label: u8, rng: &mut R) -> u8 {
    let r = rng.random_range(0..NUM_CLASSES as u8 - 1);
    if r >= true_label {
        r + 1
    } else {
        r
    }
}

/// One positive and one negative sample per image; negatives carry a fresh
/// uniformly drawn wrong label on every call.
pub fn make_pos_neg<R: Rng + ?Sized>(
    batch: &[LabeledImage],
    rng: &mut R,
) -> Result<(Vec<PolarSample>, Vec<PolarSample>)> {
    let mut pos = Vec::with_capacity(batch.len());
    let mut neg = Vec::with_capacity(batch.len());
    for img in batch {
        pos.push(PolarSample {
            vector: embed_label(img, img.label as usize)?,
            polarity: Polarity::Positive,
            true_label: img.label,
            embedded_label: img.label,
        });
        let wrong = wrong_label(img.label, rng);
        neg.push(PolarSample {
            vector: embed_label(img, wrong as usize)?,
            polarity: Polarity::Negative,
            true_label: img.label,
            embedded_label: wrong,
        });
    }
    Ok((pos, neg))
}

/// Stacks sample vectors into a `batch x width` matrix.
pub fn stack(samples: &[PolarSample]) -> Result<RealTensor> {
    let width = samples.first().map_or(0, |s| s.vector.len());
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.vector.len() != width {
            return Err(Error::Shape("ragged sample batch".into()));
        }
        data.extend_from_slice(&s.vector);
    }
    RealTensor::matrix(samples.len(), width, data)
}

/// Positive/negative matrices for `images`, used by the trainers.
pub(crate) fn polar_matrices<R: Rng + ?Sized>(
    images: &[&LabeledImage],
    rng: &mut R,
) -> Result<(RealTensor, RealTensor)> {
    let width = images.first().map_or(0, |i| i.pixels.len());
    let mut pos = Vec::with_capacity(images.len() * width);
    let mut neg = Vec::with_capacity(images.len() * width);
    for img in images {
        let start = pos.len();
        pos.extend_from_slice(&img.pixels);
        embed_into(&mut pos[start..], img.label as usize)?;
        let start = neg.len();
        neg.extend_from_slice(&img.pixels);
        embed_into(&mut neg[start..], wrong_label(img.label, rng) as usize)?;
    }
    Ok((
        RealTensor::from_raw(vec![images.len(), width], pos),
        RealTensor::from_raw(vec![images.len(), width], neg),
    ))
}
