//! CIFAR-10 binary batch format.
//!
//! Each 3073-byte record is 1 label byte (0-9) followed by 1024 red, 1024
//! green and 1024 blue bytes, each a row-major 32x32 plane.

use std::path::Path;

use crate::data::{DatasetRole, RawDataset};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3073;
const PLANE: usize = 32 * 32;

/// Channel-planar image bytes (N x 3 x 32 x 32) plus labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarBatch {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl CifarBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<CifarBatch> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "CIFAR-10 batch length {} is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * 3 * PLANE);
    let mut labels = Vec::with_capacity(n);
    for rec in 0..n {
        let start = rec * RECORD_BYTES;
        let label = bytes[start];
        if label > 9 {
            return Err(Error::Format(format!(
                "CIFAR-10 record {rec} has label byte {label}, valid range is 0-9"
            )));
        }
        labels.push(label);
        images.extend_from_slice(&bytes[start + 1..start + RECORD_BYTES]);
    }
    Ok(CifarBatch { images, labels })
}

pub fn load_cifar10_batch(path: impl AsRef<Path>) -> Result<CifarBatch> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_cifar10_batch(&bytes)
}

/// Concatenate batches (e.g. the five training files) into one dataset.
pub fn to_raw_dataset(
    name: impl Into<String>,
    batches: &[CifarBatch],
    role: DatasetRole,
) -> RawDataset {
    let n: usize = batches.iter().map(|b| b.len()).sum();
    let mut pixels01 = Vec::with_capacity(n * 3 * PLANE);
    let mut labels = Vec::with_capacity(n);
    for b in batches {
        pixels01.extend(b.images.iter().map(|&v| v as f32 / 255.0));
        labels.extend_from_slice(&b.labels);
    }
    RawDataset {
        name: name.into(),
        shape: [n, 3, 32, 32],
        pixels01,
        labels: Some(labels),
        role,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, r: u8, g: u8, b: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend(std::iter::repeat_n(r, PLANE));
        rec.extend(std::iter::repeat_n(g, PLANE));
        rec.extend(std::iter::repeat_n(b, PLANE));
        rec
    }

    #[test]
    fn hand_built_record() {
        // label 3, red plane all 255, green/blue all 0
        let bytes = record(3, 255, 0, 0);
        let batch = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(batch.labels, vec![3]);
        assert!(batch.images[..PLANE].iter().all(|&v| v == 255));
        assert!(batch.images[PLANE..].iter().all(|&v| v == 0));

        let raw = to_raw_dataset("t", &[batch], DatasetRole::InDistribution);
        assert_eq!(raw.shape, [1, 3, 32, 32]);
        assert!(raw.pixels01[..PLANE].iter().all(|&v| v == 1.0));
        assert!(raw.pixels01[PLANE..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let batch = parse_cifar10_batch(&[]).unwrap();
        assert_eq!(batch.len(), 0);
    }

    #[test]
    fn two_records_give_n_2() {
        let mut bytes = record(1, 10, 20, 30);
        bytes.extend(record(9, 1, 2, 3));
        let batch = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.labels, vec![1, 9]);
    }

    #[test]
    fn bad_length_rejected() {
        let bytes = vec![0u8; RECORD_BYTES + 1];
        assert!(matches!(
            parse_cifar10_batch(&bytes).unwrap_err(),
            Error::Format(_)
        ));
    }

    #[test]
    fn bad_label_rejected() {
        let bytes = record(10, 0, 0, 0);
        assert!(matches!(
            parse_cifar10_batch(&bytes).unwrap_err(),
            Error::Format(_)
        ));
    }
}
