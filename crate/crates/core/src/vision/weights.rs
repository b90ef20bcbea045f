//! `.favw` weights files.
//!
//! ```text
//! "FAVW"  u32 version  u32 tensor_count
//! per tensor: u32 rank, rank x u32 dims
//! per tensor: prod(dims) x f32
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in the order of
//! [`TENSOR_SHAPES`](super::cnn::TENSOR_SHAPES).

use thiserror::Error;

use super::cnn::{CnnParams, NUM_PARAMS, TENSOR_SHAPES};

pub const MAGIC: &[u8; 4] = b"FAVW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightsError {
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights version {0}, expected {VERSION}")]
    Version(u32),
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weights file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("non-finite parameter in tensor {0}")]
    NonFinite(&'static str),
}

/// Size of the shape header for the fixed architecture.
pub fn header_len() -> usize {
    12 + TENSOR_SHAPES.iter().map(|(_, s)| 4 + 4 * s.len()).sum::<usize>()
}

pub fn blob_len() -> usize {
    header_len() + 4 * NUM_PARAMS
}

pub fn export_params(params: &CnnParams<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(blob_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(TENSOR_SHAPES.len() as u32).to_le_bytes());
    for (_, shape) in TENSOR_SHAPES {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WeightsError> {
        let end = self.pos + n;
        let s = self.buf.get(self.pos..end).ok_or(WeightsError::Truncated(self.buf.len()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn import_params(blob: &[u8]) -> Result<CnnParams<f32>, WeightsError> {
    let mut r = Reader { buf: blob, pos: 0 };
    if r.take(4).map_err(|_| WeightsError::BadMagic)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WeightsError::Version(version));
    }
    let count = r.u32()? as usize;
    if count != TENSOR_SHAPES.len() {
        return Err(WeightsError::TensorCount {
            expected: TENSOR_SHAPES.len(),
            found: count,
        });
    }
    for (name, shape) in TENSOR_SHAPES {
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(WeightsError::Shape {
                name,
                expected: shape.to_vec(),
                found: vec![rank],
            });
        }
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if dims != shape {
            return Err(WeightsError::Shape {
                name,
                expected: shape.to_vec(),
                found: dims,
            });
        }
    }
    let mut params = CnnParams::<f32>::zeros();
    for (t, (name, _)) in params.tensors_mut().into_iter().zip(TENSOR_SHAPES) {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(WeightsError::NonFinite(name));
            }
        }
    }
    if r.pos != blob.len() {
        return Err(WeightsError::TrailingBytes(blob.len() - r.pos));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, streams};

    fn params() -> CnnParams<f32> {
        CnnParams::glorot(&mut stream_rng(4, streams::INIT))
    }

    #[test]
    fn blob_size_is_header_plus_params() {
        let expected = 4 * (6 * 9 + 6 + 4 * 54 + 4 + 192 * 6 + 6 + 6 * 4 + 4);
        assert_eq!(header_len(), 108);
        assert_eq!(export_params(&params()).len(), expected + 108);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let p = params();
        let back = import_params(&export_params(&p)).unwrap();
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupt_blobs_are_rejected() {
        let blob = export_params(&params());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert_eq!(import_params(&bad), Err(WeightsError::BadMagic));
        let mut bad = blob.clone();
        bad[4] = 2;
        assert_eq!(import_params(&bad), Err(WeightsError::Version(2)));
        let mut bad = blob.clone();
        bad[16] = 7; // first dim of conv1.w
        assert!(matches!(import_params(&bad), Err(WeightsError::Shape { name: "conv1.w", .. })));
        assert!(matches!(import_params(&blob[..blob.len() - 1]), Err(WeightsError::Truncated(_))));
        assert!(matches!(import_params(&blob[..2]), Err(WeightsError::BadMagic)));
        let mut long = blob.clone();
        long.push(0);
        assert_eq!(import_params(&long), Err(WeightsError::TrailingBytes(1)));
        let mut nan = blob;
        let at = header_len();
        nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(import_params(&nan), Err(WeightsError::NonFinite("conv1.w")));
    }
}
