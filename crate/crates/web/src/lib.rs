//! Browser bindings: a synthetic scene whose image tokens can be selected,
//! masked and clustered interactively.

use simignore::attention::{masked_attention, HeadAgg};
use simignore::cluster::{kmeans_2d, project_2d};
use simignore::select::{build_mask, select_tokens};
use simignore::synth::{scene, Scene, SceneConfig};
use simignore::{HeadAttention, Metric, Strategy};
use wasm_bindgen::prelude::*;

const HEADS: usize = 2;

/// Pure-Rust core of the demo, kept separate so it can be tested natively.
pub struct Model {
    scene: Scene,
    attention: HeadAttention,
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

impl Model {
    pub fn new(side: usize, seed: u64) -> Result<Self, String> {
        if !(2..=32).contains(&side) {
            return Err(format!("side must be between 2 and 32, got {side}"));
        }
        let scene = scene(SceneConfig {
            side,
            seed,
            ..SceneConfig::default()
        });
        let scores = select_tokens(
            &scene.img,
            &scene.txt,
            Metric::Cosine,
            0,
            Strategy::MaxOverText,
        )
        .map_err(|e| e.to_string())?
        .scores;
        let (lo, hi) = scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| {
                (l.min(s), h.max(s))
            });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let relevance: Vec<f64> = scores.iter().map(|s| (s - lo) / span).collect();
        let attention = scene.attention(HEADS, &relevance, seed.wrapping_add(1));
        Ok(Self { scene, attention })
    }

    pub fn side(&self) -> usize {
        self.scene.side
    }

    /// Object id per patch, `-1` for background.
    pub fn objects(&self) -> Vec<i32> {
        self.scene
            .objects
            .iter()
            .map(|o| o.map_or(-1, |id| id as i32))
            .collect()
    }

    /// Best text score of every image token and a 0/1 kept flag per token.
    pub fn selection(
        &self,
        metric: &str,
        strategy: &str,
        keep: usize,
    ) -> Result<(Vec<f64>, Vec<u8>), String> {
        let metric: Metric = parse(metric)?;
        let strategy: Strategy = parse(strategy)?;
        let sel = select_tokens(&self.scene.img, &self.scene.txt, metric, keep, strategy)
            .map_err(|e| e.to_string())?;
        let flags = sel.kept_flags().into_iter().map(u8::from).collect();
        Ok((sel.scores, flags))
    }

    /// Image-grid attention of the last query after masking, re-normalised
    /// over the surviving keys. Also returns the multiply-accumulate count.
    pub fn masked_heatmap(
        &self,
        metric: &str,
        strategy: &str,
        keep: usize,
        head_agg: &str,
    ) -> Result<(Vec<f64>, u64), String> {
        let metric: Metric = parse(metric)?;
        let strategy: Strategy = parse(strategy)?;
        let agg: HeadAgg = parse(head_agg)?;
        let sel = select_tokens(&self.scene.img, &self.scene.txt, metric, keep, strategy)
            .map_err(|e| e.to_string())?;
        let mask =
            build_mask(&self.scene.seg, &sel.kept_image_indices).map_err(|e| e.to_string())?;
        let (weights, report) =
            masked_attention(&self.attention, &mask).map_err(|e| e.to_string())?;

        let n = self.scene.seg.total();
        let q = n - 1;
        let rows: Vec<&[f64]> = match agg {
            HeadAgg::PerHead(h) if h >= HEADS => return Err(format!("head {h} out of range")),
            HeadAgg::PerHead(h) => vec![&weights[(h * n + q) * n..][..n]],
            _ => (0..HEADS)
                .map(|h| &weights[(h * n + q) * n..][..n])
                .collect(),
        };
        let img = self.scene.seg.image_range();
        let mut grid: Vec<f64> = img
            .map(|k| match agg {
                HeadAgg::Max => rows.iter().map(|r| r[k]).fold(0.0, f64::max),
                _ => rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64,
            })
            .collect();
        if agg == HeadAgg::Max {
            let total: f64 = (0..n)
                .map(|k| rows.iter().map(|r| r[k]).fold(0.0, f64::max))
                .sum();
            if total > 0.0 {
                grid.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok((grid, report.multiply_accumulate_count))
    }

    /// Planar PCA coordinates (`x0, y0, x1, y1, ..`) and k-means labels.
    pub fn scatter(&self, k: usize, seed: u64) -> Result<(Vec<f64>, Vec<u32>), String> {
        let proj = project_2d(&self.scene.img).map_err(|e| e.to_string())?;
        let assign = kmeans_2d(&proj, k, seed).map_err(|e| e.to_string())?;
        Ok((
            proj.flat_points(),
            assign.labels.iter().map(|&l| l as u32).collect(),
        ))
    }
}

/// Handle exported to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    model: Model,
    last_macs: u64,
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(side: usize, seed: u64) -> Result<Demo, JsError> {
        Ok(Demo {
            model: Model::new(side, seed).map_err(js)?,
            last_macs: 0,
        })
    }

    pub fn side(&self) -> usize {
        self.model.side()
    }

    pub fn objects(&self) -> Vec<i32> {
        self.model.objects()
    }

    pub fn scores(&self, metric: &str) -> Result<Vec<f64>, JsError> {
        Ok(self
            .model
            .selection(metric, "max-over-text", 0)
            .map_err(js)?
            .0)
    }

    pub fn kept(&self, metric: &str, strategy: &str, keep: usize) -> Result<Vec<u8>, JsError> {
        Ok(self.model.selection(metric, strategy, keep).map_err(js)?.1)
    }

    pub fn heatmap(
        &mut self,
        metric: &str,
        strategy: &str,
        keep: usize,
        head_agg: &str,
    ) -> Result<Vec<f64>, JsError> {
        let (grid, macs) = self
            .model
            .masked_heatmap(metric, strategy, keep, head_agg)
            .map_err(js)?;
        self.last_macs = macs;
        Ok(grid)
    }

    /// Multiply-accumulate count of the most recent `heatmap` call.
    pub fn last_macs(&self) -> f64 {
        self.last_macs as f64
    }

    pub fn scatter_points(&self, k: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        Ok(self.model.scatter(k, seed).map_err(js)?.0)
    }

    pub fn scatter_labels(&self, k: usize, seed: u64) -> Result<Vec<u32>, JsError> {
        Ok(self.model.scatter(k, seed).map_err(js)?.1)
    }
}
