//! Deterministic K-means: k-means++ seeding, Lloyd iterations and
//! empty-cluster repair.
//!
//! Centroids are stored as `f32`; every distance is accumulated in `f64`.
//! Batch assignment screens candidates with a GEMM-based expansion of the
//! squared distance and then re-scores every candidate that is within a
//! rounding margin of the best one with the exact difference-of-squares
//! formula, so results are identical to a linear scan.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::rng_from;

const MAGIC: &[u8; 4] = b"DSUC";
/// Rows per work item in batch assignment. Fixed so reductions do not depend
/// on the number of worker threads.
const CHUNK_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Candidates drawn per k-means++ step; the one that lowers the potential
    /// most is kept.
    pub num_init_candidates: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            max_iters: 100,
            rel_tol: 1e-6,
            seed: 0,
            num_init_candidates: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be >= 0".into()));
        }
        if self.num_init_candidates == 0 {
            return Err(Error::InvalidConfig("num_init_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub final_inertia: f64,
    pub iterations_run: usize,
    /// Inertia after seeding and after every accepted Lloyd step.
    pub inertia_trace: Vec<f64>,
}

/// `K x D` centroids of one quantiser level.
#[derive(Debug, Clone)]
pub struct Codebook {
    pub centroids: Array2<f32>,
    pub level_id: u32,
    pub training_stats: FitStats,
}

/// Codes for a batch of points and the summed squared distance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAssignment {
    pub codes: Vec<u32>,
    pub distances: Vec<f64>,
    pub inertia: f64,
}

/// Exact squared Euclidean distance, accumulated in `f64` in index order.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        acc += d * d;
    }
    acc
}

fn check_finite(data: &ArrayView2<'_, f32>) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Precomputed state for nearest-centroid search over fixed centroids.
struct NearestSearch<'a> {
    centroids: ArrayView2<'a, f32>,
    /// `D x K`, f64.
    transposed: Array2<f64>,
    norms: Array1<f64>,
    max_norm: f64,
}

impl<'a> NearestSearch<'a> {
    fn new(centroids: ArrayView2<'a, f32>) -> Self {
        let c64 = centroids.mapv(f64::from);
        let norms: Array1<f64> = c64.rows().into_iter().map(|r| r.dot(&r)).collect();
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        NearestSearch {
            centroids,
            transposed: c64.reversed_axes(),
            norms,
            max_norm,
        }
    }

    fn row(&self, k: usize) -> &[f32] {
        self.centroids
            .row(k)
            .to_slice()
            .expect("centroid rows are contiguous")
    }

    /// Lowest-index exact argmin for every row of `chunk`.
    fn assign_chunk(&self, chunk: ArrayView2<'_, f32>, out: &mut Vec<(u32, f64)>) {
        let x64 = chunk.mapv(f64::from);
        let cross = x64.dot(&self.transposed);
        let k = self.norms.len();
        let mut candidates = Vec::new();
        for (i, xrow) in chunk.rows().into_iter().enumerate() {
            let xn = x64.row(i).dot(&x64.row(i));
            let g = cross.row(i);
            let mut approx_min = f64::INFINITY;
            for j in 0..k {
                let d = xn - 2.0 * g[j] + self.norms[j];
                if d < approx_min {
                    approx_min = d;
                }
            }
            let margin = 1e-9 * (xn + self.max_norm) + 1e-30;
            candidates.clear();
            for j in 0..k {
                if xn - 2.0 * g[j] + self.norms[j] <= approx_min + margin {
                    candidates.push(j);
                }
            }
            let x = xrow.to_slice();
            let owned;
            let x = match x {
                Some(x) => x,
                None => {
                    owned = xrow.to_vec();
                    &owned
                }
            };
            let mut best = (candidates[0], squared_distance(x, self.row(candidates[0])));
            for &j in &candidates[1..] {
                let d = squared_distance(x, self.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            out.push((best.0 as u32, best.1));
        }
    }

    fn assign_all(&self, data: ArrayView2<'_, f32>) -> BatchAssignment {
        let n = data.nrows();
        let chunks = n.div_ceil(CHUNK_ROWS);
        let parts: Vec<Vec<(u32, f64)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK_ROWS;
                let hi = (lo + CHUNK_ROWS).min(n);
                let mut out = Vec::with_capacity(hi - lo);
                self.assign_chunk(data.slice(s![lo..hi, ..]), &mut out);
                out
            })
            .collect();
        let mut codes = Vec::with_capacity(n);
        let mut distances = Vec::with_capacity(n);
        let mut inertia = 0f64;
        for part in parts {
            let mut chunk_sum = 0f64;
            for (c, d) in part {
                codes.push(c);
                distances.push(d);
                chunk_sum += d;
            }
            inertia += chunk_sum;
        }
        BatchAssignment {
            codes,
            distances,
            inertia,
        }
    }
}

/// Nearest row of `centroids` for every row of `data`, with the same
/// semantics as [`Codebook::assign_batch`] but without building a codebook.
pub fn nearest_batch(centroids: ArrayView2<'_, f32>, data: ArrayView2<'_, f32>) -> Result<BatchAssignment> {
    if data.ncols() != centroids.ncols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.ncols(),
            found: data.ncols(),
        });
    }
    if centroids.nrows() == 0 {
        return Err(Error::EmptyInput("no centroids to assign to"));
    }
    let centroids = centroids.as_standard_layout();
    let data = data.as_standard_layout();
    Ok(NearestSearch::new(centroids.view()).assign_all(data.view()))
}

/// k-means++ seeding: the first centre uniformly, every further centre with
/// probability proportional to the squared distance to the nearest chosen one.
pub fn kmeanspp_init(data: ArrayView2<'_, f32>, config: &KMeansConfig) -> Result<Array2<f32>> {
    config.validate()?;
    let (n, dim) = data.dim();
    if n < config.k {
        return Err(Error::InsufficientData {
            needed: config.k,
            available: n,
        });
    }
    let data = data.as_standard_layout();
    let data = data.view();
    let mut rng = rng_from(config.seed);
    let mut chosen = Vec::with_capacity(config.k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;

    let point = |i: usize| data.row(i).to_slice().expect("standard layout");
    let mut min_dist: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| squared_distance(point(i), point(first)))
        .collect();

    while chosen.len() < config.k {
        let total: f64 = min_dist.iter().sum();
        let next = if total <= 0.0 {
            // every remaining point coincides with a chosen centre
            (0..n).find(|i| !taken[*i]).expect("n >= k")
        } else {
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for _ in 0..config.num_init_candidates {
                let target = rng.random::<f64>() * total;
                let mut cum = 0f64;
                let mut pick = None;
                for (i, d) in min_dist.iter().enumerate() {
                    if *d <= 0.0 {
                        continue;
                    }
                    cum += d;
                    pick = Some(i);
                    if cum > target {
                        break;
                    }
                }
                let cand = pick.expect("positive total has a positive entry");
                if config.num_init_candidates == 1 {
                    best = Some((cand, 0.0, Vec::new()));
                    break;
                }
                let updated: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| min_dist[i].min(squared_distance(point(i), point(cand))))
                    .collect();
                let potential: f64 = updated.iter().sum();
                if best.as_ref().map_or(true, |b| potential < b.1) {
                    best = Some((cand, potential, updated));
                }
            }
            let (cand, _, updated) = best.expect("at least one candidate");
            if updated.is_empty() {
                min_dist = (0..n)
                    .into_par_iter()
                    .map(|i| min_dist[i].min(squared_distance(point(i), point(cand))))
                    .collect();
            } else {
                min_dist = updated;
            }
            cand
        };
        if total <= 0.0 {
            min_dist[next] = 0.0;
        }
        taken[next] = true;
        chosen.push(next);
    }

    let mut out = Array2::zeros((config.k, dim));
    for (r, &i) in chosen.iter().enumerate() {
        out.row_mut(r).assign(&data.row(i));
    }
    Ok(out)
}

/// Lloyd's algorithm from a k-means++ start.
pub fn fit(data: ArrayView2<'_, f32>, config: &KMeansConfig) -> Result<Codebook> {
    config.validate()?;
    let n = data.nrows();
    if n < config.k {
        return Err(Error::InsufficientData {
            needed: config.k,
            available: n,
        });
    }
    check_finite(&data)?;
    let data = data.as_standard_layout();
    let data = data.view();

    let mut centroids = kmeanspp_init(data, config)?;
    let mut current = NearestSearch::new(centroids.view()).assign_all(data);
    let mut trace = vec![current.inertia];
    let mut iterations = 0;

    while iterations < config.max_iters && current.inertia > 0.0 {
        let mut next = update_means(data, &current.codes, &centroids);
        repair_empty_clusters(data, &current.codes, &mut next);
        let assigned = NearestSearch::new(next.view()).assign_all(data);
        if assigned.inertia > current.inertia {
            // rounding the means to f32 can undo a converged step
            break;
        }
        let improvement = (current.inertia - assigned.inertia) / current.inertia;
        centroids = next;
        current = assigned;
        trace.push(current.inertia);
        iterations += 1;
        if improvement < config.rel_tol {
            break;
        }
    }

    Ok(Codebook {
        centroids,
        level_id: 0,
        training_stats: FitStats {
            final_inertia: current.inertia,
            iterations_run: iterations,
            inertia_trace: trace,
        },
    })
}

fn update_means(data: ArrayView2<'_, f32>, codes: &[u32], previous: &Array2<f32>) -> Array2<f32> {
    let (k, dim) = previous.dim();
    let mut sums = Array2::<f64>::zeros((k, dim));
    let mut counts = vec![0usize; k];
    for (row, &c) in data.rows().into_iter().zip(codes) {
        let c = c as usize;
        counts[c] += 1;
        let mut acc = sums.row_mut(c);
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += f64::from(*v);
        }
    }
    let mut out = previous.clone();
    for (c, count) in counts.iter().enumerate() {
        if *count > 0 {
            let inv = *count as f64;
            for (o, s) in out.row_mut(c).iter_mut().zip(sums.row(c).iter()) {
                *o = (s / inv) as f32;
            }
        }
    }
    out
}

/// Re-seeds each empty cluster, in ascending index order, to the point
/// farthest from its own (updated) centroid.
fn repair_empty_clusters(data: ArrayView2<'_, f32>, codes: &[u32], centroids: &mut Array2<f32>) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &c in codes {
        counts[c as usize] += 1;
    }
    if counts.iter().all(|c| *c > 0) {
        return;
    }
    let mut dist: Vec<f64> = data
        .rows()
        .into_iter()
        .zip(codes)
        .map(|(x, &c)| {
            squared_distance(
                x.to_slice().expect("standard layout"),
                centroids.row(c as usize).to_slice().expect("standard layout"),
            )
        })
        .collect();
    for e in 0..k {
        if counts[e] > 0 {
            continue;
        }
        let mut far = 0;
        for i in 1..dist.len() {
            if dist[i] > dist[far] {
                far = i;
            }
        }
        centroids.row_mut(e).assign(&data.row(far));
        dist[far] = f64::NEG_INFINITY;
        counts[e] = 1;
    }
}

impl Codebook {
    pub fn from_centroids(centroids: Array2<f32>, level_id: u32) -> Result<Self> {
        if centroids.nrows() == 0 || centroids.ncols() == 0 {
            return Err(Error::InvalidShape(format!(
                "codebook shape {:?}",
                centroids.dim()
            )));
        }
        crate::data::feature::check_finite(&centroids)?;
        Ok(Codebook {
            centroids: centroids.as_standard_layout().into_owned(),
            level_id,
            training_stats: FitStats::default(),
        })
    }

    pub fn with_level(mut self, level_id: u32) -> Self {
        self.level_id = level_id;
        self
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroid(&self, code: u32) -> ArrayView1<'_, f32> {
        self.centroids.row(code as usize)
    }

    /// Nearest centroid by exact linear scan; ties go to the lowest index.
    pub fn assign(&self, x: ArrayView1<'_, f32>) -> Result<(u32, ArrayView1<'_, f32>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let x = x.to_vec();
        let mut best = (0usize, f64::INFINITY);
        for (j, c) in self.centroids.rows().into_iter().enumerate() {
            let d = squared_distance(&x, c.to_slice().expect("standard layout"));
            if d < best.1 {
                best = (j, d);
            }
        }
        Ok((best.0 as u32, self.centroids.row(best.0)))
    }

    pub fn assign_batch(&self, data: ArrayView2<'_, f32>) -> Result<BatchAssignment> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.ncols(),
            });
        }
        nearest_batch(self.centroids.view(), data)
    }

    /// Centroid rows for a list of codes.
    pub fn gather(&self, codes: &[u32]) -> Array2<f32> {
        self.centroids.select(Axis(0), &codes.iter().map(|c| *c as usize).collect::<Vec<_>>())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (k, d) = self.centroids.dim();
        let mut w = Writer::new(MAGIC);
        w.u32(k as u32);
        w.u32(d as u32);
        w.u32(self.level_id);
        w.f32s(self.centroids.iter());
        w.finish(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = Reader::open(path, MAGIC)?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let level_id = r.u32()?;
        if k == 0 || d == 0 {
            return Err(r.format(format!("header declares empty codebook {k}x{d}")));
        }
        let values = r.f32s(k * d)?;
        r.finish()?;
        let centroids =
            Array2::from_shape_vec((k, d), values).map_err(|e| Error::InvalidShape(e.to_string()))?;
        Codebook::from_centroids(centroids, level_id)
    }

    /// Bitwise equality of shape, level id and centroid values.
    pub fn bit_eq(&self, other: &Codebook) -> bool {
        self.level_id == other.level_id
            && self.centroids.dim() == other.centroids.dim()
            && self
                .centroids
                .iter()
                .zip(other.centroids.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
