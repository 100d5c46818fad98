//! Big-endian IDX files (optionally gzip-compressed).

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DataError, Dataset, SplitTag};
use crate::net::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(DataError::Truncated {
            what,
            need: at + 4,
            have: bytes.len(),
        })
}

/// Parse an IDX image file and its label file; pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let magic = be_u32(images, 0, "image header")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(labels, 0, "label header")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(images, 4, "image header")? as usize;
    let rows = be_u32(images, 8, "image header")? as usize;
    let cols = be_u32(images, 12, "image header")? as usize;
    let n_labels = be_u32(labels, 4, "label header")? as usize;
    if n != n_labels {
        return Err(DataError::Dimension(format!("{n} images but {n_labels} labels")));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(DataError::Dimension(format!("empty image set {n}x{rows}x{cols}")));
    }
    let need = 16 + n * rows * cols;
    if images.len() < need {
        return Err(DataError::Truncated {
            what: "image data",
            need,
            have: images.len(),
        });
    }
    if labels.len() < 8 + n {
        return Err(DataError::Truncated {
            what: "label data",
            need: 8 + n,
            have: labels.len(),
        });
    }
    let pixels: Vec<f32> = images[16..need].iter().map(|&b| b as f32 / 255.0).collect();
    let ys: Vec<u32> = labels[8..8 + n].iter().map(|&b| b as u32).collect();
    let num_classes = ys.iter().copied().max().unwrap_or(0) as usize + 1;
    let inputs = Tensor::new(vec![n, rows, cols, 1], pixels).map_err(|e| DataError::Dimension(e.to_string()))?;
    Dataset::new(inputs, ys, num_classes, SplitTag::Full)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    parse_idx(&read_maybe_gz(images_path)?, &read_maybe_gz(labels_path)?)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
