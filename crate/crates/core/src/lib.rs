//! Similarity-driven image-token selection for vision-language models.
//!
//! Image tokens are ranked by how closely their embeddings match the prompt's
//! text tokens; the least relevant ones are dropped from attention with a
//! binary mask. Around that core sit the analyses used to study the effect:
//! segment-wise attention shares and heat maps, a masked attention pass that
//! counts the remaining work, and a PCA + k-means cluster study.
//!
//! All inputs (embeddings, feature maps, attention weights) come from outside
//! the crate, usually through the [`tensor_file`] container.

pub mod attention;
pub mod cluster;
pub mod embed;
pub mod error;
mod par;
pub mod select;
pub mod synth;
pub mod tensor_file;
pub mod token_space;

#[cfg(feature = "cli")]
pub mod cli;
#[cfg(feature = "cli")]
pub mod manifest;

pub use error::{Error, Result};
pub use par::set_thread_limit;
pub use select::{Band, Budget, Metric, Strategy};
pub use token_space::{
    AttentionTensor, EmbeddingMatrix, HeadAttention, Segment, TokenSegmentation,
};
