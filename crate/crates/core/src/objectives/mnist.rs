//! IDX reader for MNIST-style files (optionally gzip-compressed).
//!
//! Layout: big-endian `u32` magic (`0x00000803` images, `0x00000801`
//! labels), big-endian `u32` dimension sizes, then raw `u8` payload.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, IdxError, Result};

use super::Dataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), IdxError> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..needed]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(&bytes[8..needed])
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an image/label IDX pair; pixels are scaled to `[0, 1]`.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    let (count, rows, cols, pixels) = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if labels.len() != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(IdxError::LabelOutOfRange { row, label }.into());
    }
    let features = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(
        features,
        labels.iter().map(|&l| l as usize).collect(),
        rows * cols,
        10,
    )
}
