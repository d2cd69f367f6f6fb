//! IDX image/label files (the MNIST distribution format).
//!
//! Header: two zero bytes, a type code (0x08 = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension. Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use super::{Corpus, DataError, Result};
use crate::nn::Sample;

const UNSIGNED_BYTE: u8 = 0x08;

fn parse_header(bytes: &[u8], expected_rank: u8) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(DataError::Idx("truncated magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UNSIGNED_BYTE {
        return Err(DataError::Idx(format!(
            "unsupported magic {:02x?}",
            &bytes[..4]
        )));
    }
    let rank = bytes[3];
    if rank != expected_rank {
        return Err(DataError::Idx(format!(
            "expected {expected_rank} dimensions, found {rank}"
        )));
    }
    let header_len = 4 + 4 * rank as usize;
    if bytes.len() < header_len {
        return Err(DataError::Idx("truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let body = &bytes[header_len..];
    let expected: usize = dims.iter().product();
    if body.len() != expected {
        return Err(DataError::Idx(format!(
            "dims {dims:?} imply {expected} bytes, found {}",
            body.len()
        )));
    }
    Ok((dims, body))
}

/// Builds a corpus from in-memory IDX image (rank 3) and label (rank 1) buffers.
pub fn parse_idx(images: &[u8], labels: &[u8], num_labels: usize) -> Result<Corpus> {
    let (img_dims, pixels) = parse_header(images, 3)?;
    let (lbl_dims, label_bytes) = parse_header(labels, 1)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(DataError::Idx(format!(
            "{} images but {} labels",
            img_dims[0], lbl_dims[0]
        )));
    }
    let feature_dim = img_dims[1] * img_dims[2];
    if feature_dim == 0 {
        return Err(DataError::Idx("empty images".into()));
    }
    let mut samples = Vec::with_capacity(img_dims[0]);
    for (img, &label) in pixels.chunks_exact(feature_dim).zip(label_bytes) {
        let label = label as usize;
        if label >= num_labels {
            return Err(DataError::Idx(format!("label {label} out of range")));
        }
        samples.push(Sample::new(
            img.iter().map(|&p| p as f64 / 255.0).collect(),
            label,
        ));
    }
    Ok(Corpus {
        samples,
        num_labels,
        feature_dim,
    })
}

pub fn load_idx(images: &Path, labels: &Path, num_labels: usize) -> Result<Corpus> {
    parse_idx(&fs::read(images)?, &fs::read(labels)?, num_labels)
}
