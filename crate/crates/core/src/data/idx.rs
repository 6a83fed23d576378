//! Reader for the big-endian IDX format used by MNIST.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

struct Header<'a> {
    dims: Vec<usize>,
    payload: &'a [u8],
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", offset + 4),
        })
}

fn parse<'a>(bytes: &'a [u8], path: &Path, magic: u32) -> Result<Header<'a>> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| read_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header_len = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header_len..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("expected {expected} data bytes, found {}", payload.len()),
        });
    }
    Ok(Header {
        dims,
        payload: &payload[..expected],
    })
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let images = parse(&image_bytes, images_path, IMAGES_MAGIC)?;
    let labels = parse(&label_bytes, labels_path, LABELS_MAGIC)?;

    let (count, pixels) = (images.dims[0], images.dims[1] * images.dims[2]);
    if count != labels.dims[0] {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.dims[0],
        });
    }
    let n = limit.map_or(count, |l| l.min(count));

    let labels: Vec<usize> = labels.payload[..n].iter().map(|&b| b as usize).collect();
    let features: Vec<f64> = images.payload[..n * pixels]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    LabeledDataset::new(features, labels, pixels.max(1), MNIST_CLASSES)
}
