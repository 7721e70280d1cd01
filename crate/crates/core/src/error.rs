use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("segmentation needs at least one image token")]
    ZeroImageTokens,
    #[error("segmentation needs at least one user token")]
    ZeroUserTokens,
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("expected {expected} values for shape {shape:?}, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat position {position}")]
    NonFinite { position: usize },
    #[error("attention weight {value} at flat position {position} is outside [0, 1]")]
    AttentionOutOfRange { position: usize, value: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("feature map is empty")]
    EmptyFeatureMap,
    #[error("pooling target {rows}x{cols} must be at least 1x1")]
    EmptyPoolTarget { rows: usize, cols: usize },
    #[error("k = {k} outside [1, {max}]")]
    KOutOfRange { k: usize, max: usize },
    #[error("budget {budget} outside [0, {n_img}]")]
    BudgetOutOfRange { budget: usize, n_img: usize },
    #[error("attention tensor has batch {0}, expected 1")]
    BatchNotOne(usize),
    #[error("attention key length {n_key} does not match segmentation total {total}")]
    SegmentationMismatch { n_key: usize, total: usize },
    #[error("head {head} query {query}: attention row sums to {sum}, expected 1")]
    UnnormalizedRow { head: usize, query: usize, sum: f64 },
    #[error("{0} image tokens cannot form a square grid")]
    NotPerfectSquare(usize),
    #[error("mask length {mask} does not match key length {n_key}")]
    LengthMismatch { mask: usize, n_key: usize },
    #[error("covariance is zero in every direction")]
    DegenerateCovariance,
    #[error("cluster id {id} outside [0, {k})")]
    ClusterIdOutOfRange { id: usize, k: usize },
    #[error("verdict is Correct with nothing ignored but Incorrect with everything ignored")]
    NonMonotonePredicate,
    #[error("verdict is Incorrect for every prefix length")]
    NeverCorrect,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("header truncated: need {expected} bytes, got {actual}")]
    TruncatedHeader { expected: usize, actual: usize },
    #[error("payload truncated: need {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("{extra} unexpected bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("dims {0:?} overflow the addressable payload size")]
    DimOverflow(Vec<u64>),
    #[error("tensor has {actual} dims, expected {expected}")]
    RankMismatch { expected: String, actual: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier used in machine-readable diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroImageTokens => "ZeroImageTokens",
            Error::ZeroUserTokens => "ZeroUserTokens",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFinite { .. } => "NonFinite",
            Error::AttentionOutOfRange { .. } => "AttentionOutOfRange",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyFeatureMap => "EmptyFeatureMap",
            Error::EmptyPoolTarget { .. } => "EmptyPoolTarget",
            Error::KOutOfRange { .. } => "KOutOfRange",
            Error::BudgetOutOfRange { .. } => "BudgetOutOfRange",
            Error::BatchNotOne(_) => "BatchNotOne",
            Error::SegmentationMismatch { .. } => "SegmentationMismatch",
            Error::UnnormalizedRow { .. } => "UnnormalizedRow",
            Error::NotPerfectSquare(_) => "NotPerfectSquare",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DegenerateCovariance => "DegenerateCovariance",
            Error::ClusterIdOutOfRange { .. } => "ClusterIdOutOfRange",
            Error::NonMonotonePredicate => "NonMonotonePredicate",
            Error::NeverCorrect => "NeverCorrect",
            Error::BadMagic(_) => "BadMagic",
            Error::BadVersion(_) => "BadVersion",
            Error::TruncatedHeader { .. } => "TruncatedHeader",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::TrailingBytes { .. } => "TrailingBytes",
            Error::DimOverflow(_) => "DimOverflow",
            Error::RankMismatch { .. } => "RankMismatch",
            Error::Manifest(_) => "Manifest",
            Error::Io { .. } => "Io",
        }
    }
}
