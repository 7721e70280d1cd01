//! Token-sequence partition and the validated tensors shared by the rest of
//! the crate.
//!
//! A multimodal prompt is laid out as `[system | image | user]`. All ranges
//! are 0-based and half-open, so the 576 LLaVA-1.5 image tokens that sit
//! behind 35 system tokens occupy `35..611`.

use std::ops::Range;

use crate::error::{Error, Result};

/// Which part of the sequence a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    System,
    Image,
    User,
}

/// The `(system, image, user)` partition of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenSegmentation {
    n_sys: usize,
    n_img: usize,
    n_usr: usize,
}

impl TokenSegmentation {
    pub fn new(n_sys: usize, n_img: usize, n_usr: usize) -> Result<Self> {
        if n_img == 0 {
            return Err(Error::ZeroImageTokens);
        }
        if n_usr == 0 {
            return Err(Error::ZeroUserTokens);
        }
        Ok(Self {
            n_sys,
            n_img,
            n_usr,
        })
    }

    pub fn n_sys(&self) -> usize {
        self.n_sys
    }

    pub fn n_img(&self) -> usize {
        self.n_img
    }

    pub fn n_usr(&self) -> usize {
        self.n_usr
    }

    pub fn total(&self) -> usize {
        self.n_sys + self.n_img + self.n_usr
    }

    pub fn system_range(&self) -> Range<usize> {
        0..self.n_sys
    }

    pub fn image_range(&self) -> Range<usize> {
        self.n_sys..self.n_sys + self.n_img
    }

    pub fn user_range(&self) -> Range<usize> {
        self.n_sys + self.n_img..self.total()
    }

    pub fn segment_of(&self, index: usize) -> Result<Segment> {
        if index < self.n_sys {
            Ok(Segment::System)
        } else if index < self.n_sys + self.n_img {
            Ok(Segment::Image)
        } else if index < self.total() {
            Ok(Segment::User)
        } else {
            Err(Error::IndexOutOfRange {
                index,
                limit: self.total(),
            })
        }
    }
}

/// Row-major `rows x dim` matrix of token embeddings. Every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        check_len(&[rows, dim], data.len())?;
        check_finite(&data)?;
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copy of the matrix with row `i` multiplied by `factor`.
    pub fn with_scaled_row(&self, i: usize, factor: f64) -> Result<Self> {
        let mut data = self.data.clone();
        data[i * self.dim..(i + 1) * self.dim]
            .iter_mut()
            .for_each(|v| *v *= factor);
        Self::new(self.rows, self.dim, data)
    }
}

/// A `(batch, heads, query, key)` stack of attention weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    batch: usize,
    heads: usize,
    n_query: usize,
    n_key: usize,
    data: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(
        batch: usize,
        heads: usize,
        n_query: usize,
        n_key: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_len(&[batch, heads, n_query, n_key], data.len())?;
        check_unit_interval(&data)?;
        Ok(Self {
            batch,
            heads,
            n_query,
            n_key,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_key(&self) -> usize {
        self.n_key
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Drops the batch axis of a single-sample tensor.
    pub fn unsequence(self) -> Result<HeadAttention> {
        if self.batch != 1 {
            return Err(Error::BatchNotOne(self.batch));
        }
        Ok(HeadAttention {
            heads: self.heads,
            n_query: self.n_query,
            n_key: self.n_key,
            data: self.data,
        })
    }
}

/// Attention weights with the batch axis removed: `(heads, query, key)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAttention {
    heads: usize,
    n_query: usize,
    n_key: usize,
    data: Vec<f64>,
}

impl HeadAttention {
    pub fn new(heads: usize, n_query: usize, n_key: usize, data: Vec<f64>) -> Result<Self> {
        check_len(&[heads, n_query, n_key], data.len())?;
        check_unit_interval(&data)?;
        Ok(Self {
            heads,
            n_query,
            n_key,
            data,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn n_query(&self) -> usize {
        self.n_query
    }

    pub fn n_key(&self) -> usize {
        self.n_key
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.heads, self.n_query, self.n_key]
    }

    pub fn row(&self, head: usize, query: usize) -> &[f64] {
        let start = (head * self.n_query + query) * self.n_key;
        &self.data[start..start + self.n_key]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_len(shape: &[usize], actual: usize) -> Result<()> {
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected: usize::MAX,
            actual,
        })?;
    if expected != actual {
        return Err(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected,
            actual,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(position) => Err(Error::NonFinite { position }),
        None => Ok(()),
    }
}

fn check_unit_interval(data: &[f64]) -> Result<()> {
    check_finite(data)?;
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(position) => Err(Error::AttentionOutOfRange {
            position,
            value: data[position],
        }),
        None => Ok(()),
    }
}
