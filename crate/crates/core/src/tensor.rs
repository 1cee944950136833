//! REPT tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   b"REPT"
//!        4   u8 version (1)
//!        5   u8 dtype   (0 = IEEE-754 binary32)
//!        6   u8 ndim    (1..=4)
//!        7   u8 reserved (0)
//!        8   ndim x u64 dimension sizes
//!        ..  product(dims) x f32, row-major
//! ```
//!
//! Frame metadata lives next to the tensor in `<file>.meta.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::FrameMatrix;

pub const MAGIC: [u8; 4] = *b"REPT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
const FIXED_HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum ReptError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("ndim must be 1..=4, got {0}")]
    BadNdim(u8),
    #[error("reserved header byte must be 0, got {0}")]
    BadReserved(u8),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),
    #[error("dimension {0} has size 0")]
    EmptyDimension(usize),
    #[error("dimension sizes overflow the addressable payload")]
    SizeOverflow,
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("tensor must have at least one element")]
    Empty,
    #[error("metadata sidecar {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Decoded payload before frame metadata is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl RawTensor {
    /// Rows and columns when the tensor is viewed as a matrix: the last
    /// dimension is the column count and the leading ones are flattened.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.dims.as_slice() {
            [n] => (*n as usize, 1),
            dims => {
                let cols = *dims.last().unwrap() as usize;
                (self.data.len() / cols, cols)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub utterance_id: String,
    pub frame_rate: f64,
    pub t0: f64,
}

pub fn encode(dims: &[u64], data: &[f32]) -> Result<Vec<u8>, ReptError> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(ReptError::BadNdim(dims.len() as u8));
    }
    let count = element_count(dims)?;
    if count as usize != data.len() {
        return Err(ReptError::Truncated {
            expected: count,
            actual: data.len() as u64,
        });
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(ReptError::NonFinite(i));
    }
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, dims.len() as u8, 0]);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn element_count(dims: &[u64]) -> Result<u64, ReptError> {
    let mut count: u64 = 1;
    for (i, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(ReptError::EmptyDimension(i));
        }
        count = count.checked_mul(d).ok_or(ReptError::SizeOverflow)?;
    }
    // payload bytes must also fit in u64
    count.checked_mul(4).ok_or(ReptError::SizeOverflow)?;
    Ok(count)
}

/// Parses a complete REPT byte stream. Every input either decodes or yields
/// exactly one error variant.
pub fn decode(bytes: &[u8]) -> Result<RawTensor, ReptError> {
    let len = bytes.len() as u64;
    if bytes.len() < FIXED_HEADER {
        // A short stream whose prefix disagrees with the magic is still a
        // bad-magic file.
        let n = bytes.len().min(4);
        if bytes[..n] != MAGIC[..n] {
            let mut m = [0u8; 4];
            m[..n].copy_from_slice(&bytes[..n]);
            return Err(ReptError::BadMagic(m));
        }
        return Err(ReptError::Truncated {
            expected: FIXED_HEADER as u64,
            actual: len,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ReptError::BadMagic(magic));
    }
    let (version, dtype, ndim, reserved) = (bytes[4], bytes[5], bytes[6], bytes[7]);
    if version != VERSION {
        return Err(ReptError::UnsupportedVersion(version));
    }
    if dtype != DTYPE_F32 {
        return Err(ReptError::UnsupportedDtype(dtype));
    }
    if !(1..=4).contains(&ndim) {
        return Err(ReptError::BadNdim(ndim));
    }
    if reserved != 0 {
        return Err(ReptError::BadReserved(reserved));
    }
    let header = FIXED_HEADER + 8 * ndim as usize;
    if bytes.len() < header {
        return Err(ReptError::Truncated {
            expected: header as u64,
            actual: len,
        });
    }
    let dims: Vec<u64> = bytes[FIXED_HEADER..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let count = element_count(&dims)?;
    let expected = (header as u64)
        .checked_add(count * 4)
        .ok_or(ReptError::SizeOverflow)?;
    if len < expected {
        return Err(ReptError::Truncated {
            expected,
            actual: len,
        });
    }
    if len > expected {
        return Err(ReptError::TrailingBytes(len - expected));
    }
    let mut data = Vec::with_capacity(count as usize);
    for (i, c) in bytes[header..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(ReptError::NonFinite(i));
        }
        data.push(v);
    }
    Ok(RawTensor { dims, data })
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReptError + '_ {
    move |source| ReptError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `m` as a 2-D REPT file plus its metadata sidecar.
pub fn write_tensor(m: &FrameMatrix, path: &Path) -> Result<(), ReptError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(ReptError::Empty);
    }
    let bytes = encode(&[m.rows() as u64, m.cols() as u64], m.data())?;
    fs::write(path, bytes).map_err(io_err(path))?;
    let meta = TensorMeta {
        utterance_id: m.utterance_id().to_string(),
        frame_rate: m.frame_rate(),
        t0: m.t0(),
    };
    let sidecar = meta_path(path);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&sidecar, json + "\n").map_err(io_err(&sidecar))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<RawTensor, ReptError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

pub fn read_meta(path: &Path) -> Result<TensorMeta, ReptError> {
    let sidecar = meta_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| ReptError::Metadata {
        path: sidecar.clone(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ReptError::Metadata {
        path: sidecar,
        reason: e.to_string(),
    })
}

/// Reads a tensor and its sidecar. Tensors with more than two dimensions are
/// flattened to `product(leading dims) x last dim`.
pub fn read_tensor(path: &Path) -> Result<FrameMatrix, ReptError> {
    let raw = read_raw(path)?;
    let meta = read_meta(path)?;
    let (rows, cols) = raw.matrix_shape();
    FrameMatrix::new(meta.utterance_id, rows, cols, raw.data, meta.frame_rate, meta.t0).map_err(
        |e| ReptError::Metadata {
            path: meta_path(path),
            reason: e.to_string(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_zero_is_header_plus_four_zero_bytes() {
        let bytes = encode(&[1, 1], &[0.0]).unwrap();
        assert_eq!(&bytes[..8], b"REPT\x01\x00\x02\x00");
        assert_eq!(&bytes[8..24], &[1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..], &[0, 0, 0, 0]);
    }

    #[test]
    fn two_by_three_layout() {
        let data: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let bytes = encode(&[2, 3], &data).unwrap();
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len() - 24, 24);
        assert_eq!(f32::from_le_bytes(bytes[24 + 4 * 4..24 + 5 * 4].try_into().unwrap()), 4.0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&[1], &[1.0]).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(ReptError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn truncated_payload() {
        let data = vec![1.0f32; 50];
        let mut bytes = encode(&[5, 10], &data).unwrap();
        bytes[8..16].copy_from_slice(&10u64.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(ReptError::Truncated { expected, actual }) if expected == 424 && actual == 224
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = encode(&[1], &[1.0]).unwrap();
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(ReptError::UnsupportedVersion(2))));
        let mut b = good.clone();
        b[5] = 1;
        assert!(matches!(decode(&b), Err(ReptError::UnsupportedDtype(1))));
        let mut b = good.clone();
        b[6] = 5;
        assert!(matches!(decode(&b), Err(ReptError::BadNdim(5))));
        let mut b = good.clone();
        b[7] = 9;
        assert!(matches!(decode(&b), Err(ReptError::BadReserved(9))));
        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode(&b), Err(ReptError::TrailingBytes(1))));
        let mut b = good;
        b[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(decode(&b), Err(ReptError::EmptyDimension(0))));
    }

    #[test]
    fn huge_dims_overflow_instead_of_allocating() {
        let mut b = encode(&[1, 1], &[1.0]).unwrap();
        b[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        b[16..24].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(decode(&b), Err(ReptError::SizeOverflow)));
    }

    #[test]
    fn nonfinite_rejected_on_both_sides() {
        assert!(matches!(encode(&[2], &[1.0, f32::INFINITY]), Err(ReptError::NonFinite(1))));
        let mut b = encode(&[2], &[1.0, 2.0]).unwrap();
        let n = b.len();
        b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&b), Err(ReptError::NonFinite(1))));
    }

    #[test]
    fn higher_rank_flattens_leading_dims() {
        let raw = decode(&encode(&[2, 3, 4], &[0.5; 24]).unwrap()).unwrap();
        assert_eq!(raw.matrix_shape(), (6, 4));
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rept");
        let m = FrameMatrix::new("utt7", 2, 2, vec![1.0, -2.5, 3.25, 0.0], 50.0, 0.01).unwrap();
        write_tensor(&m, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), m);
        fs::remove_file(meta_path(&path)).unwrap();
        assert!(matches!(read_tensor(&path), Err(ReptError::Metadata { .. })));
    }

    proptest! {
        #[test]
        fn decode_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            // must not panic; any outcome is a value or a single error
            let _ = decode(&bytes);
        }

        #[test]
        fn mutated_header_never_panics(idx in 0usize..24, val in any::<u8>()) {
            let mut b = encode(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
            b[idx] = val;
            let _ = decode(&b);
        }

        #[test]
        fn encode_decode_bit_exact(
            rows in 1usize..20,
            cols in 1usize..20,
            seed in any::<u32>(),
        ) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits((seed ^ (i as u32).wrapping_mul(2654435761)) & 0xBF7F_FFFF))
                .collect();
            let raw = decode(&encode(&[rows as u64, cols as u64], &data).unwrap()).unwrap();
            prop_assert_eq!(raw.dims, vec![rows as u64, cols as u64]);
            prop_assert!(raw.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
