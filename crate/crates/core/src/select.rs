//! Image-token selection by cross-modal similarity, and the binary attention
//! mask that drops the image tokens left out.
//!
//! Every metric is oriented so that larger means more similar; distances are
//! negated. Ties always break towards the lower index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;

use crate::embed::row_normalize;
use crate::error::{Error, Result};
use crate::par;
use crate::synth;
use crate::token_space::{EmbeddingMatrix, TokenSegmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    Cosine,
    /// Negated L2 distance.
    Euclidean,
    /// Negated L1 distance.
    Manhattan,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cosine, Metric::Euclidean, Metric::Manhattan];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

/// How the similarity matrix is turned into a set of image tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    /// Top-K entries of the flattened matrix, mapped to their image rows and
    /// de-duplicated. May keep fewer than K distinct tokens.
    FlatTopK,
    /// Score each image token by its best text match and keep exactly K.
    #[default]
    MaxOverText,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::FlatTopK => "flat-topk",
            Strategy::MaxOverText => "max-over-text",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat-topk" => Ok(Strategy::FlatTopK),
            "max-over-text" => Ok(Strategy::MaxOverText),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// A token budget expressed either as tokens kept or tokens ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Keep(usize),
    Ignore(usize),
}

impl Budget {
    /// Number of image tokens to keep out of `n_img`.
    pub fn keep_count(self, n_img: usize) -> Result<usize> {
        let (budget, keep) = match self {
            Budget::Keep(k) => (k, k),
            Budget::Ignore(i) => (i, n_img.wrapping_sub(i)),
        };
        if budget > n_img {
            return Err(Error::BudgetOutOfRange { budget, n_img });
        }
        Ok(keep)
    }
}

/// `n_img x n_usr` similarities between image and text tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n_img: usize,
    n_usr: usize,
    data: Vec<f64>,
    metric: Metric,
}

impl SimilarityMatrix {
    pub fn n_img(&self) -> usize {
        self.n_img
    }

    pub fn n_usr(&self) -> usize {
        self.n_usr
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_usr + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_usr..(i + 1) * self.n_usr]
    }

    /// Row-major flattening; entry `p` is `(p / n_usr, p % n_usr)`.
    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Best text match of every image token: `(score, text index)`.
    pub fn max_over_text(&self) -> Vec<(f64, usize)> {
        (0..self.n_img)
            .map(|i| {
                let row = self.row(i);
                let mut best = (row[0], 0);
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best.0 {
                        best = (v, j);
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-major flattening of `s`.
pub fn flatten(s: &SimilarityMatrix) -> Vec<f64> {
    s.flatten()
}

pub fn similarity_matrix(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    metric: Metric,
) -> Result<SimilarityMatrix> {
    if img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch {
            left: img.dim(),
            right: txt.dim(),
        });
    }
    if img.rows() == 0 || txt.rows() == 0 {
        return Err(Error::ShapeMismatch {
            shape: vec![img.rows(), txt.rows()],
            expected: 1,
            actual: 0,
        });
    }
    let n_usr = txt.rows();
    let mut data = vec![0.0; img.rows() * n_usr];
    match metric {
        Metric::Cosine => {
            let a = row_normalize(img).matrix;
            let b = row_normalize(txt).matrix;
            par::for_each_row(&mut data, n_usr, |i, out| {
                let x = a.row(i);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = x.iter().zip(b.row(j)).map(|(p, q)| p * q).sum();
                }
            });
        }
        Metric::Euclidean => par::for_each_row(&mut data, n_usr, |i, out| {
            let x = img.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                let sq: f64 = x
                    .iter()
                    .zip(txt.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                *o = -sq.sqrt();
            }
        }),
        Metric::Manhattan => par::for_each_row(&mut data, n_usr, |i, out| {
            let x = img.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                *o = -x
                    .iter()
                    .zip(txt.row(j))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>();
            }
        }),
    }
    Ok(SimilarityMatrix {
        n_img: img.rows(),
        n_usr,
        data,
        metric,
    })
}

/// Descending by value, then ascending by position. `±0` compare equal.
fn by_value_desc(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Positions of the `k` largest values, largest first.
pub fn topk_flat_indices(flat: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > flat.len() {
        return Err(Error::KOutOfRange { k, max: flat.len() });
    }
    let cmp = by_value_desc(flat);
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&cmp);
    Ok(idx)
}

/// Image row of each flat index, keeping the first occurrence of each row.
pub fn map_to_image_indices(
    flat_indices: &[usize],
    n_img: usize,
    n_usr: usize,
) -> Result<Vec<usize>> {
    let limit = n_img * n_usr;
    let mut seen = vec![false; n_img];
    let mut out = Vec::new();
    for &p in flat_indices {
        if p >= limit {
            return Err(Error::IndexOutOfRange { index: p, limit });
        }
        let i = p / n_usr;
        if !seen[i] {
            seen[i] = true;
            out.push(i);
        }
    }
    Ok(out)
}

/// Image-token order by score, best first.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(by_value_desc(scores));
    idx
}

/// Outcome of a selection over one image/text pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySelection {
    /// Selected flat positions, most similar first. Under `MaxOverText` this
    /// is the best-matching entry of each kept token.
    pub flat_indices: Vec<usize>,
    /// Kept image tokens (0-based within the image segment), best first.
    pub kept_image_indices: Vec<usize>,
    /// Best similarity of every image token to any text token.
    pub scores: Vec<f64>,
    pub k_requested: usize,
    pub p_total: usize,
    pub strategy: Strategy,
    pub metric: Metric,
}

impl SimilaritySelection {
    pub fn n_img(&self) -> usize {
        self.scores.len()
    }

    pub fn kept_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_img()];
        for &i in &self.kept_image_indices {
            flags[i] = true;
        }
        flags
    }

    /// Image tokens not kept, ascending.
    pub fn ignored_indices(&self) -> Vec<usize> {
        self.kept_flags()
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn select_tokens(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    metric: Metric,
    keep_budget: usize,
    strategy: Strategy,
) -> Result<SimilaritySelection> {
    if keep_budget > img.rows() {
        return Err(Error::BudgetOutOfRange {
            budget: keep_budget,
            n_img: img.rows(),
        });
    }
    let sim = similarity_matrix(img, txt, metric)?;
    select_from_matrix(&sim, keep_budget, strategy)
}

/// Selection over an already computed similarity matrix.
pub fn select_from_matrix(
    sim: &SimilarityMatrix,
    keep_budget: usize,
    strategy: Strategy,
) -> Result<SimilaritySelection> {
    let n_img = sim.n_img;
    if keep_budget > n_img {
        return Err(Error::BudgetOutOfRange {
            budget: keep_budget,
            n_img,
        });
    }
    let best = sim.max_over_text();
    let scores: Vec<f64> = best.iter().map(|b| b.0).collect();

    let (flat_indices, kept_image_indices) = match strategy {
        _ if keep_budget == 0 => (Vec::new(), Vec::new()),
        Strategy::FlatTopK => {
            let flat = topk_flat_indices(sim.as_flat(), keep_budget)?;
            let kept = map_to_image_indices(&flat, n_img, sim.n_usr)?;
            (flat, kept)
        }
        Strategy::MaxOverText => {
            let mut kept = rank_by_score(&scores);
            kept.truncate(keep_budget);
            let flat = kept.iter().map(|&i| i * sim.n_usr + best[i].1).collect();
            (flat, kept)
        }
    };

    Ok(SimilaritySelection {
        flat_indices,
        kept_image_indices,
        scores,
        k_requested: keep_budget,
        p_total: n_img * sim.n_usr,
        strategy,
        metric: sim.metric,
    })
}

/// Which importance band an ablation removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Band {
    /// Lowest-scoring tokens.
    Unimportant,
    /// A contiguous rank band centred on the median rank.
    Intermediate,
    /// Highest-scoring tokens.
    Important,
    /// A uniform sample drawn with the caller's seed.
    Random,
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unimportant" => Ok(Band::Unimportant),
            "intermediate" => Ok(Band::Intermediate),
            "important" => Ok(Band::Important),
            "random" => Ok(Band::Random),
            other => Err(format!("unknown band {other:?}")),
        }
    }
}

/// Tokens to keep after dropping `ignore_count` tokens of `band`, in rank
/// order (best first).
pub fn band_kept(scores: &[f64], band: Band, ignore_count: usize, seed: u64) -> Result<Vec<usize>> {
    let n = scores.len();
    if ignore_count > n {
        return Err(Error::BudgetOutOfRange {
            budget: ignore_count,
            n_img: n,
        });
    }
    let ranked = rank_by_score(scores);
    let mut drop = vec![false; n];
    match band {
        Band::Important => ranked[..ignore_count].iter().for_each(|&i| drop[i] = true),
        Band::Unimportant => ranked[n - ignore_count..]
            .iter()
            .for_each(|&i| drop[i] = true),
        Band::Intermediate => {
            let start = (n - ignore_count) / 2;
            ranked[start..start + ignore_count]
                .iter()
                .for_each(|&i| drop[i] = true);
        }
        Band::Random => {
            let mut rng = synth::rng(seed);
            sample(&mut rng, n, ignore_count)
                .iter()
                .for_each(|i| drop[i] = true);
        }
    }
    Ok(ranked.into_iter().filter(|&i| !drop[i]).collect())
}

/// Ablation selection: rank image tokens by their best text similarity and
/// ignore `ignore_count` of them from the requested band.
pub fn importance_band_selection(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    metric: Metric,
    band: Band,
    ignore_count: usize,
    seed: u64,
) -> Result<SimilaritySelection> {
    let sim = similarity_matrix(img, txt, metric)?;
    let best = sim.max_over_text();
    let scores: Vec<f64> = best.iter().map(|b| b.0).collect();
    let kept = band_kept(&scores, band, ignore_count, seed)?;
    Ok(SimilaritySelection {
        flat_indices: kept.iter().map(|&i| i * sim.n_usr + best[i].1).collect(),
        k_requested: kept.len(),
        kept_image_indices: kept,
        scores,
        p_total: sim.n_img * sim.n_usr,
        strategy: Strategy::MaxOverText,
        metric,
    })
}

/// Binary attention mask over the whole sequence. System and user tokens
/// are always attended; image tokens only when kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    seg: TokenSegmentation,
    bits: Vec<bool>,
}

impl TokenMask {
    pub fn seg(&self) -> &TokenSegmentation {
        &self.seg
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn ignored_count(&self) -> usize {
        self.len() - self.popcount()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

pub fn build_mask(seg: &TokenSegmentation, kept_image_indices: &[usize]) -> Result<TokenMask> {
    let mut bits = vec![true; seg.total()];
    let img = seg.image_range();
    bits[img.clone()].iter_mut().for_each(|b| *b = false);
    for &i in kept_image_indices {
        if i >= seg.n_img() {
            return Err(Error::IndexOutOfRange {
                index: i,
                limit: seg.n_img(),
            });
        }
        bits[img.start + i] = true;
    }
    Ok(TokenMask { seg: *seg, bits })
}
