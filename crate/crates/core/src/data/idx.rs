//! IDX file format (the MNIST-family container).
//!
//! Layout: 4 magic bytes `[0x00, 0x00, 0x08, dims]` (0x08 = unsigned byte
//! elements) where dims is 3 for image files and 1 for label files, then
//! `dims` big-endian u32 dimension sizes, then the raw bytes row-major.

use std::path::Path;

use crate::data::{DatasetRole, RawDataset};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x03];
pub const LABEL_MAGIC: [u8; 4] = [0x00, 0x00, 0x08, 0x01];

/// Raw image payload: `shape` is (N, H, W), bytes row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub shape: [usize; 3],
    pub bytes: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "truncated IDX header: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn check_magic(bytes: &[u8], expected: [u8; 4], what: &str) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "file too short for an IDX {what} header ({} bytes)",
            bytes.len()
        )));
    }
    let got = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if got != expected {
        return Err(Error::Format(format!(
            "bad IDX {what} magic: expected {expected:02x?}, got {got:02x?}"
        )));
    }
    Ok(())
}

/// Parse an IDX image file from bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC, "image")?;
    let n = be_u32(bytes, 4)? as usize;
    let h = be_u32(bytes, 8)? as usize;
    let w = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX image payload length mismatch: header wants {expected} bytes total, file has {}",
            bytes.len()
        )));
    }
    Ok(IdxImages {
        shape: [n, h, w],
        bytes: bytes[16..].to_vec(),
    })
}

/// Parse an IDX label file from bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, "label")?;
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX label payload length mismatch: header wants {expected} bytes total, file has {}",
            bytes.len()
        )));
    }
    Ok(bytes[8..].to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_idx_images(&bytes)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    parse_idx_labels(&bytes)
}

/// Encode images into IDX bytes (round-trip counterpart of the parser).
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let [n, h, w] = images.shape;
    let mut out = Vec::with_capacity(16 + images.bytes.len());
    out.extend_from_slice(&IMAGE_MAGIC);
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(&images.bytes);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Assemble an IDX image/label pair into an unnormalized dataset.
pub fn to_raw_dataset(
    name: impl Into<String>,
    images: IdxImages,
    labels: Option<Vec<u8>>,
    role: DatasetRole,
) -> Result<RawDataset> {
    let [n, h, w] = images.shape;
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::Format(format!(
                "{n} images but {} labels",
                l.len()
            )));
        }
    }
    Ok(RawDataset {
        name: name.into(),
        shape: [n, 1, h, w],
        pixels01: images.bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        labels,
        role,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_encoded_image_file() {
        // magic 00 00 08 03, dims (1,2,2), payload [0,128,255,64]
        let mut bytes = vec![0x00, 0x00, 0x08, 0x03];
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        let images = parse_idx_images(&bytes).unwrap();
        assert_eq!(images.shape, [1, 2, 2]);
        assert_eq!(images.bytes, vec![0, 128, 255, 64]);
    }

    #[test]
    fn hand_encoded_label_file() {
        // magic 00 00 08 01, dim (3), payload [7,0,9]
        let mut bytes = vec![0x00, 0x00, 0x08, 0x01];
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn wrong_magic_is_rejected_with_offending_bytes() {
        let mut bytes = vec![0x00, 0x00, 0x08, 0x02];
        bytes.extend_from_slice(&1u32.to_be_bytes());
        let err = parse_idx_images(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains("02"), "message should name the bad bytes: {msg}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut bytes = vec![0x00, 0x00, 0x08, 0x03];
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]); // needs 8
        assert!(matches!(
            parse_idx_images(&bytes).unwrap_err(),
            Error::Format(_)
        ));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let images = IdxImages {
            shape: [3, 4, 5],
            bytes: (0..60).map(|i| (i * 37 % 251) as u8).collect(),
        };
        let encoded = encode_idx_images(&images);
        assert_eq!(parse_idx_images(&encoded).unwrap(), images);

        let labels: Vec<u8> = (0..9).collect();
        let encoded = encode_idx_labels(&labels);
        assert_eq!(parse_idx_labels(&encoded).unwrap(), labels);
    }
}
