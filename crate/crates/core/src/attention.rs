//! How much attention an output token pays to the system, image and user
//! segments, the per-patch influence heat map, and a masked attention pass
//! that counts the work left after image tokens are ignored.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::select::TokenMask;
use crate::token_space::{HeadAttention, TokenSegmentation};

/// Tolerance on the row sum of an input attention row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// How attention heads are combined into a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum HeadAgg {
    #[default]
    Mean,
    /// Element-wise maximum, re-normalised to sum to one.
    Max,
    PerHead(usize),
}

impl fmt::Display for HeadAgg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadAgg::Mean => f.write_str("mean"),
            HeadAgg::Max => f.write_str("max"),
            HeadAgg::PerHead(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for HeadAgg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(HeadAgg::Mean),
            "max" => Ok(HeadAgg::Max),
            other => other.parse().map(HeadAgg::PerHead).map_err(|_| {
                format!("head aggregation must be mean, max or a head index, got {other:?}")
            }),
        }
    }
}

/// Attention shares of one query row.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSummary {
    pub sys_share: f64,
    /// Total weight on image keys.
    pub img_share: f64,
    pub usr_share: f64,
    /// Weight on each image key, in image order.
    pub per_image_scores: Vec<f64>,
}

fn check_row_sum(row: &[f64], head: usize, query: usize) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::UnnormalizedRow { head, query, sum });
    }
    Ok(())
}

/// Combines the heads of query row `query` according to `agg`.
///
/// Input rows must each sum to one (within [`ROW_SUM_TOLERANCE`]).
pub fn aggregate_row(a: &HeadAttention, query: usize, agg: HeadAgg) -> Result<Vec<f64>> {
    if query >= a.n_query() {
        return Err(Error::IndexOutOfRange {
            index: query,
            limit: a.n_query(),
        });
    }
    if a.heads() == 0 {
        return Err(Error::IndexOutOfRange { index: 0, limit: 0 });
    }
    match agg {
        HeadAgg::PerHead(h) => {
            if h >= a.heads() {
                return Err(Error::IndexOutOfRange {
                    index: h,
                    limit: a.heads(),
                });
            }
            let row = a.row(h, query);
            check_row_sum(row, h, query)?;
            Ok(row.to_vec())
        }
        HeadAgg::Mean => {
            let mut acc = vec![0.0; a.n_key()];
            for h in 0..a.heads() {
                let row = a.row(h, query);
                check_row_sum(row, h, query)?;
                acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            let n = a.heads() as f64;
            acc.iter_mut().for_each(|v| *v /= n);
            Ok(acc)
        }
        HeadAgg::Max => {
            let mut acc = vec![0.0f64; a.n_key()];
            for h in 0..a.heads() {
                let row = a.row(h, query);
                check_row_sum(row, h, query)?;
                acc.iter_mut().zip(row).for_each(|(m, v)| *m = m.max(*v));
            }
            let sum: f64 = acc.iter().sum();
            if sum > 0.0 {
                acc.iter_mut().for_each(|v| *v /= sum);
            }
            Ok(acc)
        }
    }
}

fn check_seg(a: &HeadAttention, seg: &TokenSegmentation) -> Result<()> {
    if a.n_key() != seg.total() {
        return Err(Error::SegmentationMismatch {
            n_key: a.n_key(),
            total: seg.total(),
        });
    }
    Ok(())
}

pub fn segment_shares(
    a: &HeadAttention,
    seg: &TokenSegmentation,
    query: usize,
    agg: HeadAgg,
) -> Result<InfluenceSummary> {
    check_seg(a, seg)?;
    let row = aggregate_row(a, query, agg)?;
    let per_image_scores = row[seg.image_range()].to_vec();
    Ok(InfluenceSummary {
        sys_share: row[seg.system_range()].iter().sum(),
        img_share: per_image_scores.iter().sum(),
        usr_share: row[seg.user_range()].iter().sum(),
        per_image_scores,
    })
}

/// Image-token attention of one query laid out on the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatGrid {
    pub side: usize,
    /// Row-major `side x side` values.
    pub values: Vec<f64>,
    pub source_query: usize,
    pub head_agg: HeadAgg,
}

impl HeatGrid {
    pub fn cell(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.side + c]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Plain (ASCII) PGM, scaled so the largest cell is 255.
    pub fn to_pgm(&self) -> String {
        let max = self.values.iter().copied().fold(0.0f64, f64::max);
        let mut out = format!("P2\n{} {}\n255\n", self.side, self.side);
        for row in self.values.chunks(self.side.max(1)) {
            let line: Vec<String> = row
                .iter()
                .map(|&v| {
                    let level = if max > 0.0 {
                        (v / max * 255.0).round()
                    } else {
                        0.0
                    };
                    (level.clamp(0.0, 255.0) as u8).to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// `row,col,value` with the raw values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for (p, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", p / self.side, p % self.side, v);
        }
        out
    }
}

/// Integer square root when `n` is a perfect square.
pub fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r.checked_mul(r) == Some(n)).then_some(r)
}

pub fn influence_heatmap(
    a: &HeadAttention,
    seg: &TokenSegmentation,
    query: usize,
    agg: HeadAgg,
) -> Result<HeatGrid> {
    let side = exact_sqrt(seg.n_img()).ok_or(Error::NotPerfectSquare(seg.n_img()))?;
    let summary = segment_shares(a, seg, query, agg)?;
    Ok(HeatGrid {
        side,
        values: summary.per_image_scores,
        source_query: query,
        head_agg: agg,
    })
}

/// Work and sanity figures of a masked attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PassReport {
    /// Keys that survive the mask (same for every row).
    pub active_key_count: usize,
    /// One per surviving weight in every `(head, query)` row.
    pub multiply_accumulate_count: u64,
    /// Sum of all re-normalised weights.
    pub renormalized_row_checksum: f64,
    /// Largest `|row sum - 1|` among rows that could be re-normalised.
    pub max_row_deviation: f64,
    /// `(head, query)` rows with no surviving weight.
    pub degenerate_rows: Vec<(usize, usize)>,
}

/// Zeroes the masked key columns of every row, re-normalises over the keys
/// that survive, and accounts for the work done.
pub fn simulate_masked_pass(a: &HeadAttention, mask: &TokenMask) -> Result<PassReport> {
    masked_pass(a, mask, |_, _, _| {})
}

/// As [`simulate_masked_pass`], also returning the re-normalised weights in
/// `(head, query, key)` order; masked keys are zero.
pub fn masked_attention(a: &HeadAttention, mask: &TokenMask) -> Result<(Vec<f64>, PassReport)> {
    let mut out = vec![0.0; a.as_slice().len()];
    let (nq, nk) = (a.n_query(), a.n_key());
    let report = masked_pass(a, mask, |h, q, row| {
        let start = (h * nq + q) * nk;
        out[start..start + nk].copy_from_slice(row);
    })?;
    Ok((out, report))
}

fn masked_pass<F>(a: &HeadAttention, mask: &TokenMask, mut sink: F) -> Result<PassReport>
where
    F: FnMut(usize, usize, &[f64]),
{
    if mask.len() != a.n_key() {
        return Err(Error::LengthMismatch {
            mask: mask.len(),
            n_key: a.n_key(),
        });
    }
    let active: Vec<usize> = mask
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(k, _)| k)
        .collect();

    let mut macs = 0u64;
    let mut checksum = 0.0;
    let mut max_dev = 0.0f64;
    let mut degenerate = Vec::new();
    let mut row_out = vec![0.0; a.n_key()];
    for h in 0..a.heads() {
        for q in 0..a.n_query() {
            let row = a.row(h, q);
            let mut sum = 0.0;
            for &k in &active {
                sum += row[k];
                macs += 1;
            }
            row_out.iter_mut().for_each(|v| *v = 0.0);
            if sum > 0.0 {
                let mut renorm = 0.0;
                for &k in &active {
                    let w = row[k] / sum;
                    row_out[k] = w;
                    renorm += w;
                }
                checksum += renorm;
                max_dev = max_dev.max((renorm - 1.0).abs());
            } else {
                degenerate.push((h, q));
            }
            sink(h, q, &row_out);
        }
    }
    Ok(PassReport {
        active_key_count: active.len(),
        multiply_accumulate_count: macs,
        renormalized_row_checksum: checksum,
        max_row_deviation: max_dev,
        degenerate_rows: degenerate,
    })
}
