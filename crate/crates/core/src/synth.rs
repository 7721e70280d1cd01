//! Seeded synthetic inputs: random matrices, planted-relevance instances,
//! normalised attention stacks and a small image-grid "scene" used by the
//! CLI `synth` command and the browser demo.
//!
//! Everything here draws from `ChaCha8Rng`, so a seed reproduces the same
//! values on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::token_space::{EmbeddingMatrix, HeadAttention, TokenSegmentation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` values uniform in `[-1, 1)`.
pub fn uniform_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `n` standard-normal values.
pub fn normal_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn uniform_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, dim, uniform_vec(rows * dim, seed)).expect("finite by construction")
}

pub fn normal_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, dim, normal_vec(rows * dim, seed)).expect("finite by construction")
}

/// Image/text embeddings where a known subset of image rows is relevant.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub img: EmbeddingMatrix,
    pub txt: EmbeddingMatrix,
    /// Image rows that are positive multiples of some text row, ascending.
    pub planted: Vec<usize>,
}

/// Builds an instance in which `planted` image rows are copies of random text
/// rows scaled by a factor in `[0.1, 10]`, and every other image row is noise
/// orthogonal to all text rows.
///
/// Text rows occupy the first `dim / 2` coordinates and noise rows the rest,
/// which makes the orthogonality exact.
pub fn planted_relevance(
    n_img: usize,
    n_usr: usize,
    dim: usize,
    planted: usize,
    seed: u64,
) -> PlantedInstance {
    assert!(dim >= 2 && planted <= n_img);
    let mut rng = rng(seed);
    let split = dim / 2;

    let mut txt = vec![0.0; n_usr * dim];
    for row in txt.chunks_exact_mut(dim) {
        for v in &mut row[..split] {
            *v = rng.sample(StandardNormal);
        }
    }

    let chosen = rand::seq::index::sample(&mut rng, n_img, planted);
    let mut is_planted = vec![false; n_img];
    for i in chosen.iter() {
        is_planted[i] = true;
    }

    let mut img = vec![0.0; n_img * dim];
    for (i, row) in img.chunks_exact_mut(dim).enumerate() {
        if is_planted[i] {
            let j = rng.random_range(0..n_usr);
            let scale: f64 = rng.random_range(0.1..=10.0);
            for (v, t) in row.iter_mut().zip(&txt[j * dim..(j + 1) * dim]) {
                *v = scale * t;
            }
        } else {
            for v in &mut row[split..] {
                *v = rng.sample(StandardNormal);
            }
        }
    }

    PlantedInstance {
        img: EmbeddingMatrix::new(n_img, dim, img).expect("finite"),
        txt: EmbeddingMatrix::new(n_usr, dim, txt).expect("finite"),
        planted: (0..n_img).filter(|&i| is_planted[i]).collect(),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Attention stack whose rows are softmaxes of standard-normal logits.
pub fn random_attention(heads: usize, n_query: usize, n_key: usize, seed: u64) -> HeadAttention {
    let mut data = normal_vec(heads * n_query * n_key, seed);
    for row in data.chunks_exact_mut(n_key.max(1)) {
        softmax_in_place(row);
    }
    HeadAttention::new(heads, n_query, n_key, data).expect("softmax rows lie in [0, 1]")
}

/// A square grid of image patches containing a few objects, plus a prompt
/// that mentions some of them.
#[derive(Debug, Clone)]
pub struct Scene {
    pub side: usize,
    pub seg: TokenSegmentation,
    pub img: EmbeddingMatrix,
    pub txt: EmbeddingMatrix,
    /// Object id per patch (`None` for background), row-major over the grid.
    pub objects: Vec<Option<usize>>,
    /// Objects the prompt talks about.
    pub mentioned: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    pub side: usize,
    pub n_sys: usize,
    pub n_usr: usize,
    pub dim: usize,
    pub objects: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            side: 24,
            n_sys: 35,
            n_usr: 40,
            dim: 32,
            objects: 4,
            seed: 0,
        }
    }
}

pub fn scene(cfg: SceneConfig) -> Scene {
    assert!(cfg.side >= 1 && cfg.n_usr >= 1 && cfg.dim >= 1);
    let mut rng = rng(cfg.seed);
    let n_img = cfg.side * cfg.side;
    let dim = cfg.dim;

    let prototypes: Vec<Vec<f64>> = (0..cfg.objects)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let discs: Vec<(f64, f64, f64)> = (0..cfg.objects)
        .map(|_| {
            let s = cfg.side as f64;
            (
                rng.random_range(0.15 * s..0.85 * s),
                rng.random_range(0.15 * s..0.85 * s),
                rng.random_range(0.08 * s..0.2 * s),
            )
        })
        .collect();

    let mut objects = Vec::with_capacity(n_img);
    let mut img = Vec::with_capacity(n_img * dim);
    for r in 0..cfg.side {
        for c in 0..cfg.side {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let obj = discs
                .iter()
                .position(|&(cy, cx, rad)| (y - cy).powi(2) + (x - cx).powi(2) <= rad * rad);
            objects.push(obj);
            img.extend((0..dim).map(|d| {
                let noise: f64 = rng.sample(StandardNormal);
                match obj {
                    Some(o) => prototypes[o][d] + 0.35 * noise,
                    None => noise,
                }
            }));
        }
    }

    let n_mentioned = (cfg.objects / 2).max(cfg.objects.min(1));
    let mentioned: Vec<usize> = (0..n_mentioned).collect();
    let mut txt = Vec::with_capacity(cfg.n_usr * dim);
    for j in 0..cfg.n_usr {
        let anchor = if j % 3 == 0 && !mentioned.is_empty() {
            Some(mentioned[(j / 3) % mentioned.len()])
        } else {
            None
        };
        txt.extend((0..dim).map(|d| {
            let noise: f64 = rng.sample(StandardNormal);
            match anchor {
                Some(o) => prototypes[o][d] + 0.5 * noise,
                None => noise,
            }
        }));
    }

    Scene {
        side: cfg.side,
        seg: TokenSegmentation::new(cfg.n_sys, n_img, cfg.n_usr).expect("non-empty segments"),
        img: EmbeddingMatrix::new(n_img, dim, img).expect("finite"),
        txt: EmbeddingMatrix::new(cfg.n_usr, dim, txt).expect("finite"),
        objects,
        mentioned,
    }
}

impl Scene {
    /// Attention over the whole sequence in which image keys draw weight in
    /// proportion to `relevance` (one value per image token), system key 0
    /// acts as a sink, and every logit carries normal noise.
    pub fn attention(&self, heads: usize, relevance: &[f64], seed: u64) -> HeadAttention {
        assert_eq!(relevance.len(), self.seg.n_img());
        let n = self.seg.total();
        let mut rng = rng(seed);
        let img = self.seg.image_range();
        let mut data = Vec::with_capacity(heads * n * n);
        for h in 0..heads {
            let sharpness = 3.0 + h as f64;
            for _q in 0..n {
                let mut row: Vec<f64> = (0..n)
                    .map(|k| {
                        let noise: f64 = rng.sample(StandardNormal);
                        let base = if k == 0 && self.seg.n_sys() > 0 {
                            4.0
                        } else if img.contains(&k) {
                            sharpness * relevance[k - img.start]
                        } else {
                            0.5
                        };
                        base + 0.3 * noise
                    })
                    .collect();
                softmax_in_place(&mut row);
                data.extend(row);
            }
        }
        HeadAttention::new(heads, n, n, data).expect("softmax rows lie in [0, 1]")
    }
}
