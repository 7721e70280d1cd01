//! Minimal tensor container.
//!
//! ```text
//! offset  size       field
//! 0       4          magic  "SIGT"
//! 4       4          version, u32 LE (= 1)
//! 8       4          ndim, u32 LE
//! 12      8 * ndim   dims, u64 LE each
//! ..      4 * prod   payload, row-major IEEE-754 binary32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::token_space::{AttentionTensor, EmbeddingMatrix, HeadAttention};

pub const MAGIC: [u8; 4] = *b"SIGT";
pub const VERSION: u32 = 1;

/// An n-dimensional binary32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

fn element_count(dims: &[u64]) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| Error::DimOverflow(dims.to_vec()))
}

impl Tensor {
    pub fn new(dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape: dims.iter().map(|&d| d as usize).collect(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims_usize(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |expected: usize| -> Result<()> {
            if bytes.len() < expected {
                Err(Error::TruncatedHeader {
                    expected,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        need(12)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header =
            ndim.checked_mul(8)
                .and_then(|d| d.checked_add(12))
                .ok_or(Error::TruncatedHeader {
                    expected: usize::MAX,
                    actual: bytes.len(),
                })?;
        need(header)?;
        let dims: Vec<u64> = bytes[12..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let count = element_count(&dims)?;
        let payload = &bytes[header..];
        let expected = count * 4;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes {
                extra: payload.len() - expected,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    fn expect_rank(&self, expected: &[usize]) -> Result<()> {
        if !expected.contains(&self.dims.len()) {
            return Err(Error::RankMismatch {
                expected: expected
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(" or "),
                actual: self.dims.len(),
            });
        }
        Ok(())
    }

    fn widened(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Interprets a rank-2 tensor as `rows x dim` embeddings.
    pub fn to_embeddings(&self) -> Result<EmbeddingMatrix> {
        self.expect_rank(&[2])?;
        let d = self.dims_usize();
        EmbeddingMatrix::new(d[0], d[1], self.widened())
    }

    /// Interprets a rank-3 `(heads, query, key)` or rank-4
    /// `(batch, heads, query, key)` tensor as attention weights.
    pub fn to_attention(&self) -> Result<HeadAttention> {
        self.expect_rank(&[3, 4])?;
        let d = self.dims_usize();
        if d.len() == 4 {
            AttentionTensor::new(d[0], d[1], d[2], d[3], self.widened())?.unsequence()
        } else {
            HeadAttention::new(d[0], d[1], d[2], self.widened())
        }
    }

    /// `(channels, height, width)` feature map.
    pub fn to_feature_map(&self) -> Result<crate::embed::FeatureMap> {
        self.expect_rank(&[3])?;
        let d = self.dims_usize();
        crate::embed::FeatureMap::new(d[0], d[1], d[2], self.widened())
    }

    /// `(in_dim, out_dim)` alignment weights.
    pub fn to_alignment(&self) -> Result<crate::embed::AlignmentMap> {
        self.expect_rank(&[2])?;
        let d = self.dims_usize();
        crate::embed::AlignmentMap::new(d[0], d[1], self.widened())
    }

    /// Narrows to binary32; values outside the f32 range become infinite.
    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(
            dims.iter().map(|&d| d as u64).collect(),
            data.iter().map(|&v| v as f32).collect(),
        )
    }
}

impl From<&EmbeddingMatrix> for Tensor {
    fn from(m: &EmbeddingMatrix) -> Self {
        Tensor::from_f64(&[m.rows(), m.dim()], m.as_slice()).expect("shape matches data")
    }
}

impl From<&HeadAttention> for Tensor {
    fn from(a: &HeadAttention) -> Self {
        let [h, q, k] = a.shape();
        Tensor::from_f64(&[1, h, q, k], a.as_slice()).expect("shape matches data")
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
