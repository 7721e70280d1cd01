//! JSON run manifest: segment sizes, selection settings and the tensor files
//! a run reads. Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{adaptive_pool, feature_align};
use crate::error::{Error, Result};
use crate::select::{Budget, Metric, Strategy};
use crate::tensor_file::read_tensor;
use crate::token_space::{EmbeddingMatrix, HeadAttention, TokenSegmentation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub n_sys: usize,
    pub n_img: usize,
    pub n_usr: usize,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore: Option<usize>,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub seed: u64,
    /// Final image embeddings, `n_img x T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embeddings: Option<PathBuf>,
    /// Encoder output `(C', H', W')`; used with `alignment` instead of
    /// `image_embeddings`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_map: Option<PathBuf>,
    /// Alignment weights `I x T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<PathBuf>,
    /// Text embeddings, `n_usr x T`.
    pub text_embeddings: PathBuf,
    /// Attention weights, `(1, H, Q, n_sys + n_img + n_usr)` or `(H, Q, ..)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<PathBuf>,
}

fn default_metric() -> String {
    Metric::Cosine.as_str().to_string()
}

fn default_strategy() -> String {
    Strategy::MaxOverText.as_str().to_string()
}

/// A manifest whose settings parsed and whose tensors loaded and matched.
#[derive(Debug, Clone)]
pub struct Run {
    pub seg: TokenSegmentation,
    pub metric: Metric,
    pub strategy: Strategy,
    pub budget: Budget,
    pub seed: u64,
    pub img: EmbeddingMatrix,
    pub txt: EmbeddingMatrix,
    pub attention: Option<HeadAttention>,
}

impl Run {
    pub fn keep_count(&self) -> Result<usize> {
        self.budget.keep_count(self.seg.n_img())
    }

    pub fn attention(&self) -> Result<&HeadAttention> {
        self.attention
            .as_ref()
            .ok_or_else(|| Error::Manifest("this command needs an \"attention\" tensor".into()))
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn budget(&self) -> Result<Budget> {
        match (self.keep, self.ignore) {
            (Some(k), None) => Ok(Budget::Keep(k)),
            (None, Some(i)) => Ok(Budget::Ignore(i)),
            _ => Err(invalid(
                "exactly one of \"keep\" and \"ignore\" must be given",
            )),
        }
    }

    /// Parses settings, loads every referenced tensor and checks the shapes
    /// against the declared token counts.
    pub fn resolve(&self, base_dir: &Path) -> Result<Run> {
        let seg = TokenSegmentation::new(self.n_sys, self.n_img, self.n_usr)?;
        let metric: Metric = self.metric.parse().map_err(invalid)?;
        let strategy: Strategy = self.strategy.parse().map_err(invalid)?;
        let budget = self.budget()?;
        budget.keep_count(self.n_img)?;

        let path = |p: &PathBuf| base_dir.join(p);
        let txt = read_tensor(path(&self.text_embeddings))?.to_embeddings()?;
        if txt.rows() != self.n_usr {
            return Err(invalid(format!(
                "text embeddings have {} rows, n_usr is {}",
                txt.rows(),
                self.n_usr
            )));
        }

        let img =
            match (&self.image_embeddings, &self.feature_map, &self.alignment) {
                (Some(p), None, None) => read_tensor(path(p))?.to_embeddings()?,
                (None, Some(fm), Some(al)) => {
                    let fm = read_tensor(path(fm))?.to_feature_map()?;
                    let al = read_tensor(path(al))?.to_alignment()?;
                    feature_align(&adaptive_pool(&fm, self.n_img, al.in_dim())?, &al)?
                }
                _ => return Err(invalid(
                    "give either \"image_embeddings\" or both \"feature_map\" and \"alignment\"",
                )),
            };
        if img.rows() != self.n_img {
            return Err(invalid(format!(
                "image embeddings have {} rows, n_img is {}",
                img.rows(),
                self.n_img
            )));
        }
        if img.dim() != txt.dim() {
            return Err(Error::DimensionMismatch {
                left: img.dim(),
                right: txt.dim(),
            });
        }

        let attention = match &self.attention {
            Some(p) => {
                let a = read_tensor(path(p))?.to_attention()?;
                if a.n_key() != seg.total() {
                    return Err(Error::SegmentationMismatch {
                        n_key: a.n_key(),
                        total: seg.total(),
                    });
                }
                Some(a)
            }
            None => None,
        };

        Ok(Run {
            seg,
            metric,
            strategy,
            budget,
            seed: self.seed,
            img,
            txt,
            attention,
        })
    }
}

/// Reads and resolves a manifest file.
pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let manifest = RunManifest::read(path)?;
    manifest.resolve(path.parent().unwrap_or(Path::new(".")))
}
