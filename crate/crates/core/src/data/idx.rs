//! IDX container reader and writer (big-endian header, unsigned byte payload).

use std::fs;
use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};
use flate2::read::GzDecoder;

use super::{LabeledDataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

/// Decoded image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(BigEndian::read_u32)
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!(
                "header truncated: need 4 bytes, {} available",
                bytes.len().saturating_sub(offset)
            ),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic number {magic}, expected {expected}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Format {
        offset: bytes.len() as u64,
        message: format!("payload truncated: header promises {len} bytes from offset {start}"),
    })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = vec![0u8; 16];
    BigEndian::write_u32(&mut out[0..4], IMAGES_MAGIC);
    BigEndian::write_u32(&mut out[4..8], images.count as u32);
    BigEndian::write_u32(&mut out[8..12], images.rows as u32);
    BigEndian::write_u32(&mut out[12..16], images.cols as u32);
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; 8];
    BigEndian::write_u32(&mut out[0..4], LABELS_MAGIC);
    BigEndian::write_u32(&mut out[4..8], labels.len() as u32);
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from decoded IDX contents: pixels scaled to `[0, 1]`,
/// person id = digit class, camera 0 for every sample, all tagged `Train`.
pub fn read_idx(images: &IdxImages, labels: &[u8]) -> Result<LabeledDataset> {
    if images.count != labels.len() {
        return Err(Error::Consistency(format!(
            "image file holds {} items but label file holds {}",
            images.count,
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::Consistency(format!(
            "label {l} at item {i} is outside 0-9"
        )));
    }
    let dim = images.rows * images.cols;
    let data = images
        .pixels
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    LabeledDataset::new(
        Tensor::matrix(images.count, dim, data)?,
        labels.iter().map(|&l| usize::from(l)).collect(),
        vec![0; images.count],
        vec![Split::Train; images.count],
        Some((images.cols, images.rows)),
    )
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads an image and a label file, either raw or gzip-compressed.
pub fn read_idx_files(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    read_idx(&images, &labels)
}

impl LabeledDataset {
    /// Re-encodes `[0, 1]`-scaled image inputs as IDX pixels.
    pub fn to_idx_images(&self) -> Result<IdxImages> {
        let (cols, rows) = self
            .image_shape
            .ok_or_else(|| Error::Usage("dataset has no image shape".into()))?;
        if self.input_dim() != rows * cols {
            return Err(Error::Usage(
                "only single-channel images can be written as IDX".into(),
            ));
        }
        let pixels = self
            .inputs
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Ok(IdxImages {
            count: self.len(),
            rows,
            cols,
            pixels,
        })
    }
}
