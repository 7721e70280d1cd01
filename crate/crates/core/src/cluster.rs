//! Embedding cluster study: PCA to the plane, seeded k-means, cluster-based
//! ignore sets, overlap with a similarity selection, and the search for the
//! smallest ignored prefix that flips an external verdict.

use rand::Rng;

use crate::error::{Error, Result};
use crate::synth;
use crate::token_space::EmbeddingMatrix;

pub const POWER_ITERATION_CAP: usize = 1000;
pub const POWER_ITERATION_TOL: f64 = 1e-9;
pub const LLOYD_ITERATION_CAP: usize = 300;

/// Token embeddings projected onto their two leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    /// Unit principal axes, leading axis first.
    pub basis: [Vec<f64>; 2],
    pub mean: Vec<f64>,
    /// Sample variance along each axis (the two leading eigenvalues).
    pub variances: [f64; 2],
}

impl Projection2D {
    /// Points as a flat `n x 2` buffer, ready for [`kmeans`].
    pub fn flat_points(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| *p).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(m: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    m.chunks_exact(dim).map(|row| dot(row, v)).collect()
}

fn remove_component(v: &mut [f64], axis: &[f64]) {
    let c = dot(v, axis);
    v.iter_mut().zip(axis).for_each(|(x, a)| *x -= c * a);
}

/// Leading eigenvector of a symmetric PSD matrix, optionally restricted to the
/// complement of `exclude`. Returns `(vector, rayleigh quotient)`.
fn power_iteration(cov: &[f64], dim: usize, exclude: Option<&[f64]>) -> (Vec<f64>, f64) {
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 / dim as f64).collect();
    if let Some(ax) = exclude {
        remove_component(&mut v, ax);
        if normalize(&mut v) < 1e-12 {
            // start happened to be parallel to the excluded axis
            let j = (0..dim)
                .min_by(|&a, &b| ax[a].abs().total_cmp(&ax[b].abs()))
                .unwrap_or(0);
            v = vec![0.0; dim];
            v[j] = 1.0;
            remove_component(&mut v, ax);
        }
    }
    normalize(&mut v);

    for _ in 0..POWER_ITERATION_CAP {
        let mut w = mat_vec(cov, dim, &v);
        if let Some(ax) = exclude {
            remove_component(&mut w, ax);
        }
        if normalize(&mut w) <= f64::MIN_POSITIVE {
            // no variance left in this subspace; any unit vector is an axis
            break;
        }
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if delta < POWER_ITERATION_TOL {
            break;
        }
    }
    if let Some(ax) = exclude {
        remove_component(&mut v, ax);
        normalize(&mut v);
    }
    // sign convention: largest-magnitude component positive
    let pivot = (0..dim)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
        .unwrap_or(0);
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let lambda = dot(&v, &mat_vec(cov, dim, &v));
    (v, lambda)
}

/// Centres the rows and projects them onto the top two principal axes,
/// found by power iteration with deflation from a fixed start vector.
pub fn project_2d(emb: &EmbeddingMatrix) -> Result<Projection2D> {
    let (n, dim) = (emb.rows(), emb.dim());
    if dim < 2 {
        return Err(Error::ShapeMismatch {
            shape: vec![n, dim],
            expected: 2,
            actual: dim,
        });
    }
    if n < 2 {
        return Err(Error::DegenerateCovariance);
    }

    let mut mean = vec![0.0; dim];
    for row in emb.iter_rows() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = vec![0.0; dim * dim];
    let mut centred = vec![0.0; dim];
    for row in emb.iter_rows() {
        centred
            .iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(c, (v, m))| *c = v - m);
        for a in 0..dim {
            for b in a..dim {
                cov[a * dim + b] += centred[a] * centred[b];
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[a * dim + b] / (n - 1) as f64;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }
    let trace: f64 = (0..dim).map(|a| cov[a * dim + a]).sum();
    if trace <= 0.0 {
        return Err(Error::DegenerateCovariance);
    }

    let (first, l1) = power_iteration(&cov, dim, None);
    let (second, l2) = power_iteration(&cov, dim, Some(&first));

    let points = emb
        .iter_rows()
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            [dot(&c, &first), dot(&c, &second)]
        })
        .collect();

    Ok(Projection2D {
        points,
        basis: [first, second],
        mean,
        variances: [l1, l2.max(0.0)],
    })
}

/// Result of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub dim: usize,
    /// Cluster id of every point.
    pub labels: Vec<usize>,
    /// Row-major `k x dim` centroids.
    pub centroids: Vec<f64>,
    /// Sum of squared distances of points to their centroid.
    pub inertia: f64,
    /// Inertia after each assignment step, first to last.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every point (ties to the lowest id) and the inertia.
fn assign(points: &[f64], dim: usize, centroids: &[f64], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, label) in points.chunks_exact(dim).zip(labels.iter_mut()) {
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
            let d = dist2(p, centroid);
            if d < best.0 {
                best = (d, c);
            }
        }
        *label = best.1;
        inertia += best.0;
    }
    inertia
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, seed: u64) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = synth::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(point(i), point(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(point(i), point(next)));
        }
    }
    chosen
        .iter()
        .flat_map(|&i| point(i).iter().copied())
        .collect()
}

/// Seeded k-means over a flat `n x dim` buffer: k-means++ seeding, then
/// Lloyd iterations until the labels stop changing or the iteration cap.
/// A cluster that empties is re-seeded at the point farthest from its centroid.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = points.len().checked_div(dim).unwrap_or(0);
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, max: n });
    }
    let mut centroids = plus_plus_init(points, dim, k, seed);
    let mut labels = vec![0; n];
    let mut history = vec![assign(points, dim, &centroids, &mut labels)];
    let mut next_labels = vec![0; n];
    let mut iterations = 0;

    while iterations < LLOYD_ITERATION_CAP {
        iterations += 1;
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.chunks_exact(dim).zip(&labels) {
            counts[l] += 1;
            sums[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(p)
                .for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / inv;
                }
            }
        }
        let mut taken = vec![false; n];
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..n)
                .filter(|&i| !taken[i])
                .map(|i| {
                    let l = labels[i];
                    (
                        dist2(
                            &points[i * dim..(i + 1) * dim],
                            &centroids[l * dim..(l + 1) * dim],
                        ),
                        i,
                    )
                })
                .fold(None, |best: Option<(f64, usize)>, cur| match best {
                    Some(b) if b.0 >= cur.0 => Some(b),
                    _ => Some(cur),
                })
                .map(|(_, i)| i)
                .expect("k <= n leaves a free point");
            taken[far] = true;
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
        }

        history.push(assign(points, dim, &centroids, &mut next_labels));
        let stable = next_labels == labels;
        std::mem::swap(&mut labels, &mut next_labels);
        if stable {
            break;
        }
    }

    Ok(ClusterAssignment {
        k,
        dim,
        labels,
        centroids,
        inertia: *history.last().expect("at least one assignment"),
        inertia_history: history,
        iterations,
        seed,
    })
}

/// k-means on the 2-D projection.
pub fn kmeans_2d(proj: &Projection2D, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans(&proj.flat_points(), 2, k, seed)
}

/// k-means in the full embedding space.
pub fn kmeans_embedding(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans(emb.as_slice(), emb.dim(), k, seed)
}

/// Points whose cluster is not in `ignore_clusters`, ascending.
pub fn cluster_ignore_selection(
    assign: &ClusterAssignment,
    ignore_clusters: &[usize],
) -> Result<Vec<usize>> {
    let mut drop = vec![false; assign.k];
    for &id in ignore_clusters {
        if id >= assign.k {
            return Err(Error::ClusterIdOutOfRange { id, k: assign.k });
        }
        drop[id] = true;
    }
    Ok(assign
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| !drop[l])
        .map(|(i, _)| i)
        .collect())
}

/// How many of the `ignored` points fall in each cluster.
pub fn overlap_report(ignored: &[usize], assign: &ClusterAssignment) -> Result<Vec<usize>> {
    let mut hist = vec![0; assign.k];
    for &i in ignored {
        let label = assign.labels.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            limit: assign.labels.len(),
        })?;
        hist[*label] += 1;
    }
    Ok(hist)
}

/// Outcome of the external check after ignoring a prefix of tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticalCount {
    /// Smallest prefix length whose removal gives `Correct`.
    pub count: usize,
    /// Number of times the verdict was evaluated.
    pub calls: usize,
}

/// Binary search for the shortest prefix of `ordered_ignore_list` whose
/// removal makes `verdict` return `Correct`.
///
/// The verdict is assumed monotone in the prefix length. The full list is
/// probed first; if it is `Incorrect` the empty prefix is probed to tell a
/// predicate that never turns correct from a non-monotone one.
pub fn critical_count_search<F>(
    ordered_ignore_list: &[usize],
    mut verdict: F,
) -> Result<CriticalCount>
where
    F: FnMut(&[usize]) -> Verdict,
{
    let len = ordered_ignore_list.len();
    let mut calls = 0;
    let mut probe = |m: usize| {
        calls += 1;
        verdict(&ordered_ignore_list[..m]) == Verdict::Correct
    };
    if !probe(len) {
        return Err(if probe(0) {
            Error::NonMonotonePredicate
        } else {
            Error::NeverCorrect
        });
    }
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(CriticalCount { count: hi, calls })
}
