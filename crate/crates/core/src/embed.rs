//! From encoder feature maps to image embeddings that live in the text
//! embedding space: adaptive average pooling, a linear alignment map and
//! L2 row normalisation.
//!
//! The vision encoder is not part of this crate. Callers hand over its
//! `C' x H' x W'` output, or skip this module and load final embeddings.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::par;
use crate::token_space::{check_finite, EmbeddingMatrix};

/// Encoder output of shape `(channels, height, width)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                shape: vec![channels, height, width],
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, channel: usize, position: usize) -> f64 {
        self.data[channel * self.positions() + position]
    }
}

/// Linear projection from the pooled image width `I` to the text width `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
}

impl AlignmentMap {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        let expected = in_dim * out_dim;
        if weights.len() != expected {
            return Err(Error::ShapeMismatch {
                shape: vec![in_dim, out_dim],
                expected,
                actual: weights.len(),
            });
        }
        check_finite(&weights)?;
        Ok(Self {
            in_dim,
            out_dim,
            weights,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Half-open range of source cells feeding output bin `k`.
///
/// Boundaries are `floor(k * len / bins)`; when there are more bins than
/// cells the range is widened to one cell so that no bin is empty.
pub fn pool_bin(k: usize, len: usize, bins: usize) -> Range<usize> {
    let start = k * len / bins;
    let end = ((k + 1) * len / bins).max(start + 1);
    start..end
}

/// Adaptive average pooling of a feature map to `n_img x out_dim`.
///
/// Spatial positions are split into `n_img` bins and channels into
/// `out_dim` bins; each output cell is the mean of its sub-block.
pub fn adaptive_pool(fm: &FeatureMap, n_img: usize, out_dim: usize) -> Result<EmbeddingMatrix> {
    if fm.data.is_empty() {
        return Err(Error::EmptyFeatureMap);
    }
    if n_img == 0 || out_dim == 0 {
        return Err(Error::EmptyPoolTarget {
            rows: n_img,
            cols: out_dim,
        });
    }
    let positions = fm.positions();
    let mut out = vec![0.0; n_img * out_dim];
    par::for_each_row(&mut out, out_dim, |r, row| {
        let spatial = pool_bin(r, positions, n_img);
        for (c, cell) in row.iter_mut().enumerate() {
            let chans = pool_bin(c, fm.channels, out_dim);
            let count = (spatial.len() * chans.len()) as f64;
            let mut sum = 0.0;
            for ch in chans {
                for p in spatial.clone() {
                    sum += fm.get(ch, p);
                }
            }
            *cell = sum / count;
        }
    });
    EmbeddingMatrix::new(n_img, out_dim, out)
}

/// `x . weights`, mapping each row from `in_dim` to `out_dim`.
pub fn feature_align(x: &EmbeddingMatrix, map: &AlignmentMap) -> Result<EmbeddingMatrix> {
    if x.dim() != map.in_dim {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: map.in_dim,
        });
    }
    let t = map.out_dim;
    let mut out = vec![0.0; x.rows() * t];
    par::for_each_row(&mut out, t, |i, row| {
        for (k, &xv) in x.row(i).iter().enumerate() {
            let w = &map.weights[k * t..(k + 1) * t];
            for (o, &wv) in row.iter_mut().zip(w) {
                *o += xv * wv;
            }
        }
    });
    EmbeddingMatrix::new(x.rows(), t, out)
}

/// Result of [`row_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    pub matrix: EmbeddingMatrix,
    /// Rows whose norm was zero; they are returned as zero rows.
    pub zero_rows: Vec<usize>,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales every row to unit Euclidean length. Zero rows stay zero and are
/// reported instead of failing, since padding tokens produce them.
pub fn row_normalize(m: &EmbeddingMatrix) -> NormalizedRows {
    let dim = m.dim();
    let mut data = m.as_slice().to_vec();
    par::for_each_row(&mut data, dim, |_, row| {
        let norm = l2_norm(row);
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    });
    let zero_rows = m
        .iter_rows()
        .enumerate()
        .filter(|(_, r)| l2_norm(r) == 0.0)
        .map(|(i, _)| i)
        .collect();
    NormalizedRows {
        matrix: EmbeddingMatrix::new(m.rows(), dim, data).expect("normalising keeps values finite"),
        zero_rows,
    }
}
