//! A small encoder–quantiser–decoder trained to reconstruct the latents,
//! with a single VQ codebook or a residual stack of codebooks (RVQ).
//!
//! Encoder and decoder are each one hidden ReLU layer. Codebooks follow an
//! exponential moving average of the encoder outputs assigned to them rather
//! than a gradient; the encoder receives the reconstruction gradient through
//! the quantiser by the straight-through estimator, plus a commitment term.
//!
//! Weights are kept at `f32` precision (every update is rounded), which is
//! what the checkpoint stores, while all arithmetic runs in `f64`.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::data::{SplitView, Utterance};
use crate::error::{Error, Result};
use crate::kmeans::{self, nearest_batch, KMeansConfig};
use crate::quantise::{Granularity, QuantisedSequence, Quantiser};
use crate::rng::{child_rng, derive_seed};

const MAGIC: &[u8; 4] = b"DSUN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub code_dim: usize,
    /// Codes per level; the number of entries is the number of levels.
    pub codes_per_level: Vec<usize>,
    pub commitment_weight: f64,
    pub ema_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Codes whose EMA count falls below this are re-seeded each epoch.
    pub dead_code_threshold: f64,
    /// Half-width of the uniform perturbation added to the identity-style
    /// initial weights.
    pub init_scale: f64,
    /// Warm-start sample size is `max(batch_size, warm_start_factor * K)`.
    pub warm_start_factor: usize,
    /// Probe the raw centroid sum instead of the decoded reconstruction.
    pub probe_raw_centroids: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            input_dim: 64,
            hidden_dim: 256,
            code_dim: 64,
            codes_per_level: vec![500],
            commitment_weight: 0.25,
            ema_decay: 0.99,
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 10,
            patience: 3,
            seed: 0,
            dead_code_threshold: 1e-2,
            init_scale: 1e-2,
            warm_start_factor: 4,
            probe_raw_centroids: false,
        }
    }
}

impl CodecConfig {
    /// Configuration for `levels` levels of `k` codes over `input_dim`.
    pub fn new(input_dim: usize, k: usize, levels: usize) -> Self {
        CodecConfig {
            input_dim,
            code_dim: input_dim,
            codes_per_level: vec![k; levels],
            ..CodecConfig::default()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.codes_per_level.len()
    }

    pub fn budget(&self) -> usize {
        self.codes_per_level.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.code_dim == 0 {
            return bad("codec dimensions must be >= 1".into());
        }
        if self.codes_per_level.is_empty() || self.codes_per_level.contains(&0) {
            return bad("every codec level needs at least one code".into());
        }
        for (name, v) in [
            ("ema_decay", self.ema_decay),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if !(self.commitment_weight >= 0.0) {
            return bad("commitment_weight must be >= 0".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1".into());
        }
        Ok(())
    }
}

fn round_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

fn round_f32_1(a: &mut Array1<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Encoder, decoder, codebooks and EMA accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    /// `H x D`.
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    /// `D_code x H`.
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    /// `H x D_code`.
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array1<f64>,
    /// `D x H`.
    pub dec_w2: Array2<f64>,
    pub dec_b2: Array1<f64>,
    /// One `K_l x D_code` matrix per level.
    pub codebooks: Vec<Array2<f32>>,
    pub ema_counts: Vec<Array1<f32>>,
    pub ema_sums: Vec<Array2<f32>>,
}

/// Gradients of the encoder and decoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecGrad {
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array1<f64>,
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array1<f64>,
    pub dec_w1: Array2<f64>,
    pub dec_b1: Array1<f64>,
    pub dec_w2: Array2<f64>,
    pub dec_b2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub reconstruction: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Maps `[I; -I]` then `[I, -I]` through a ReLU give the identity, so the
/// untrained codec passes its input straight to the quantiser.
fn identity_pair(rng: &mut crate::rng::Rng, inp: usize, hidden: usize, out: usize, scale: f64) -> (Array2<f64>, Array2<f64>) {
    let mut noise = |shape: (usize, usize)| {
        Array2::from_shape_simple_fn(shape, || {
            if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            }
        })
    };
    let mut w1 = noise((hidden, inp));
    let mut w2 = noise((out, hidden));
    let n = inp.min(out).min(hidden / 2);
    for i in 0..n {
        w1[[i, i]] += 1.0;
        w1[[n + i, i]] -= 1.0;
        w2[[i, i]] += 1.0;
        w2[[i, n + i]] -= 1.0;
    }
    round_f32(&mut w1);
    round_f32(&mut w2);
    (w1, w2)
}

/// Deterministic weight initialisation; codebooks are zero until
/// [`warm_start`].
pub fn init_weights(config: &CodecConfig) -> Result<CodecParams> {
    config.validate()?;
    let mut rng = child_rng(config.seed, 0);
    let (d, h, c) = (config.input_dim, config.hidden_dim, config.code_dim);
    let (enc_w1, enc_w2) = identity_pair(&mut rng, d, h, c, config.init_scale);
    let (dec_w1, dec_w2) = identity_pair(&mut rng, c, h, d, config.init_scale);
    Ok(CodecParams {
        enc_w1,
        enc_b1: Array1::zeros(h),
        enc_w2,
        enc_b2: Array1::zeros(c),
        dec_w1,
        dec_b1: Array1::zeros(h),
        dec_w2,
        dec_b2: Array1::zeros(d),
        codebooks: config.codes_per_level.iter().map(|&k| Array2::zeros((k, c))).collect(),
        ema_counts: config.codes_per_level.iter().map(|&k| Array1::zeros(k)).collect(),
        ema_sums: config.codes_per_level.iter().map(|&k| Array2::zeros((k, c))).collect(),
    })
}

/// Initial weights plus codebooks warm-started by K-means on encoder outputs
/// of a sample of `train_frames` (level by level on the running residual).
pub fn init_params(config: &CodecConfig, train_frames: ArrayView2<'_, f32>) -> Result<CodecParams> {
    let mut params = init_weights(config)?;
    warm_start(&mut params, config, train_frames)?;
    Ok(params)
}

fn warm_sample(config: &CodecConfig, frames: ArrayView2<'_, f32>) -> Array2<f32> {
    let kmax = config.codes_per_level.iter().copied().max().unwrap_or(1);
    let want = config.batch_size.max(config.warm_start_factor * kmax).min(frames.nrows());
    let mut rng = child_rng(config.seed, 1);
    let mut idx: Vec<usize> = (0..frames.nrows()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(want);
    idx.sort_unstable();
    frames.select(Axis(0), &idx)
}

pub fn warm_start(params: &mut CodecParams, config: &CodecConfig, train_frames: ArrayView2<'_, f32>) -> Result<()> {
    let sample = warm_sample(config, train_frames);
    let z = params.encode(sample.view().mapv(f64::from).view()).mapv(|v| v as f32);
    let mut residual = z;
    for (l, &k) in config.codes_per_level.iter().enumerate() {
        let km = KMeansConfig::new(k).with_seed(derive_seed(config.seed, 10 + l as u64));
        let cb = kmeans::fit(residual.view(), &km)?;
        let assigned = cb.assign_batch(residual.view())?;
        residual = &residual - &cb.gather(&assigned.codes);
        params.ema_counts[l] = Array1::ones(k);
        params.ema_sums[l] = cb.centroids.clone();
        params.codebooks[l] = cb.centroids;
    }
    Ok(())
}

/// Codebooks built from randomly chosen encoder outputs, the baseline a warm
/// start is compared against.
pub fn random_codebooks(params: &CodecParams, config: &CodecConfig, frames: ArrayView2<'_, f32>) -> Result<Vec<Array2<f32>>> {
    let z = params.encode(frames.mapv(f64::from).view()).mapv(|v| v as f32);
    let mut rng = child_rng(config.seed, 2);
    let rows: Vec<usize> = (0..z.nrows()).collect();
    config
        .codes_per_level
        .iter()
        .map(|&k| {
            if rows.len() < k {
                return Err(Error::InsufficientData {
                    needed: k,
                    available: rows.len(),
                });
            }
            let pick: Vec<usize> = rows.choose_multiple(&mut rng, k).copied().collect();
            Ok(z.select(Axis(0), &pick))
        })
        .collect()
}

/// Output of greedy residual quantisation for one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqResult {
    pub codes: Vec<u32>,
    pub z_q: Array1<f32>,
    /// Norm of the residual after each level.
    pub residual_norms: Vec<f64>,
}

/// Greedy residual quantisation: each level picks the centroid nearest to
/// what the previous levels left unexplained.
pub fn rvq_quantise(z: ArrayView1<'_, f32>, codebooks: &[Array2<f32>]) -> Result<RvqResult> {
    let batch = z.insert_axis(Axis(0));
    let out = rvq_quantise_batch(batch, codebooks)?;
    let residual_norms = out
        .residuals
        .iter()
        .skip(1)
        .map(|r| r.row(0).iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt())
        .collect();
    Ok(RvqResult {
        codes: out.codes.row(0).to_vec(),
        z_q: out.z_q.row(0).to_owned(),
        residual_norms,
    })
}

/// Batch form of [`rvq_quantise`].
#[derive(Debug, Clone)]
pub struct RvqBatch {
    /// `B x L`.
    pub codes: Array2<u32>,
    pub z_q: Array2<f32>,
    /// `residuals[l]` is the input to level `l`; the last entry is what
    /// remains after every level.
    pub residuals: Vec<Array2<f32>>,
    /// Running centroid sum after each level.
    pub partial_sums: Vec<Array2<f32>>,
}

pub fn rvq_quantise_batch(z: ArrayView2<'_, f32>, codebooks: &[Array2<f32>]) -> Result<RvqBatch> {
    let (b, _) = z.dim();
    let mut codes = Array2::zeros((b, codebooks.len()));
    let mut residual = z.to_owned();
    let mut sum = Array2::<f32>::zeros(z.raw_dim());
    let mut residuals = Vec::with_capacity(codebooks.len() + 1);
    let mut partial_sums = Vec::with_capacity(codebooks.len());
    for (l, cb) in codebooks.iter().enumerate() {
        let assigned = nearest_batch(cb.view(), residual.view())?;
        let chosen = cb.select(Axis(0), &assigned.codes.iter().map(|c| *c as usize).collect::<Vec<_>>());
        codes.column_mut(l).assign(&Array1::from(assigned.codes));
        let next = &residual - &chosen;
        residuals.push(residual);
        residual = next;
        sum += &chosen;
        partial_sums.push(sum.clone());
    }
    residuals.push(residual);
    Ok(RvqBatch {
        codes,
        z_q: sum,
        residuals,
        partial_sums,
    })
}

/// The straight-through estimator's forward value: `z + sg(z_q - z)`.
pub fn straight_through(z: &Array2<f64>, z_q: &Array2<f64>) -> Array2<f64> {
    z + &(z_q - z)
}

struct Forward {
    a1: Array2<f64>,
    h1: Array2<f64>,
    z: Array2<f64>,
    z_q: Array2<f64>,
    commit_target: Array2<f64>,
    a3: Array2<f64>,
    h3: Array2<f64>,
    recon: Array2<f64>,
    rvq: Option<RvqBatch>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

/// Frozen quantiser state for finite-difference checks: the quantised value
/// becomes `z + (z_q0 - z0)` and the commitment target stays `z_q0`.
#[derive(Debug, Clone)]
pub struct FrozenQuantisation {
    pub z0: Array2<f64>,
    pub z_q0: Array2<f64>,
}

impl CodecParams {
    pub fn num_levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let h1 = relu(&(x.dot(&self.enc_w1.t()) + &self.enc_b1));
        h1.dot(&self.enc_w2.t()) + &self.enc_b2
    }

    pub fn decode(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let h3 = relu(&(z.dot(&self.dec_w1.t()) + &self.dec_b1));
        h3.dot(&self.dec_w2.t()) + &self.dec_b2
    }

    fn forward(&self, x: ArrayView2<'_, f64>, frozen: Option<&FrozenQuantisation>) -> Result<Forward> {
        let a1 = x.dot(&self.enc_w1.t()) + &self.enc_b1;
        let h1 = relu(&a1);
        let z = h1.dot(&self.enc_w2.t()) + &self.enc_b2;
        let (z_q, commit_target, rvq) = match frozen {
            Some(f) => (&z + &(&f.z_q0 - &f.z0), f.z_q0.clone(), None),
            None => {
                let rvq = rvq_quantise_batch(z.mapv(|v| v as f32).view(), &self.codebooks)?;
                let zq = rvq.z_q.mapv(f64::from);
                (straight_through(&z, &zq), zq, Some(rvq))
            }
        };
        let a3 = z_q.dot(&self.dec_w1.t()) + &self.dec_b1;
        let h3 = relu(&a3);
        let recon = h3.dot(&self.dec_w2.t()) + &self.dec_b2;
        Ok(Forward {
            a1,
            h1,
            z,
            z_q,
            commit_target,
            a3,
            h3,
            recon,
            rvq,
        })
    }

    /// Reconstruction of a batch through encoder, quantiser and decoder.
    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, None)?.recon)
    }

    /// Losses and weight gradients for a batch. The gradient treats the
    /// quantiser as the identity (straight-through); with `frozen` it is the
    /// exact gradient of the resulting surrogate loss.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<'_, f64>,
        commitment_weight: f64,
        frozen: Option<&FrozenQuantisation>,
    ) -> Result<(Losses, CodecGrad, Option<RvqBatch>)> {
        let f = self.forward(x, frozen)?;
        let (b, d) = x.dim();
        let c = f.z.ncols();
        let diff = &f.recon - &x;
        let reconstruction = diff.iter().map(|v| v * v).sum::<f64>() / (b * d) as f64;
        let cdiff = &f.z - &f.commit_target;
        let commitment = cdiff.iter().map(|v| v * v).sum::<f64>() / (b * c) as f64;
        let losses = Losses {
            reconstruction,
            commitment,
            total: reconstruction + commitment_weight * commitment,
        };

        let d_recon = diff * (2.0 / (b * d) as f64);
        let dec_w2 = d_recon.t().dot(&f.h3);
        let dec_b2 = d_recon.sum_axis(Axis(0));
        let mut da3 = d_recon.dot(&self.dec_w2);
        da3.zip_mut_with(&f.a3, |g, a| {
            if *a <= 0.0 {
                *g = 0.0
            }
        });
        let dec_w1 = da3.t().dot(&f.z_q);
        let dec_b1 = da3.sum_axis(Axis(0));
        let dz = da3.dot(&self.dec_w1) + &(cdiff * (2.0 * commitment_weight / (b * c) as f64));
        let enc_w2 = dz.t().dot(&f.h1);
        let enc_b2 = dz.sum_axis(Axis(0));
        let mut da1 = dz.dot(&self.enc_w2);
        da1.zip_mut_with(&f.a1, |g, a| {
            if *a <= 0.0 {
                *g = 0.0
            }
        });
        let enc_w1 = da1.t().dot(&x);
        let enc_b1 = da1.sum_axis(Axis(0));
        Ok((
            losses,
            CodecGrad {
                enc_w1,
                enc_b1,
                enc_w2,
                enc_b2,
                dec_w1,
                dec_b1,
                dec_w2,
                dec_b2,
            },
            f.rvq,
        ))
    }

    /// Encoder output of a batch, quantised; used by the checks on
    /// straight-through behaviour.
    pub fn quantise(&self, x: ArrayView2<'_, f64>) -> Result<RvqBatch> {
        let z = self.encode(x).mapv(|v| v as f32);
        rvq_quantise_batch(z.view(), &self.codebooks)
    }

    fn sgd_step(&mut self, g: &CodecGrad, lr: f64) {
        let pairs2: [(&mut Array2<f64>, &Array2<f64>); 4] = [
            (&mut self.enc_w1, &g.enc_w1),
            (&mut self.enc_w2, &g.enc_w2),
            (&mut self.dec_w1, &g.dec_w1),
            (&mut self.dec_w2, &g.dec_w2),
        ];
        for (p, d) in pairs2 {
            p.scaled_add(-lr, d);
            round_f32(p);
        }
        let pairs1: [(&mut Array1<f64>, &Array1<f64>); 4] = [
            (&mut self.enc_b1, &g.enc_b1),
            (&mut self.enc_b2, &g.enc_b2),
            (&mut self.dec_b1, &g.dec_b1),
            (&mut self.dec_b2, &g.dec_b2),
        ];
        for (p, d) in pairs1 {
            p.scaled_add(-lr, d);
            round_f32_1(p);
        }
    }

    /// EMA update of every level from the residuals it saw in a batch. Rows
    /// whose count exceeds `threshold` become `sum / count`.
    pub fn ema_update(&mut self, rvq: &RvqBatch, decay: f64, threshold: f64) {
        for l in 0..self.codebooks.len() {
            let k = self.codebooks[l].nrows();
            let c = self.codebooks[l].ncols();
            let mut counts = vec![0f64; k];
            let mut sums = Array2::<f64>::zeros((k, c));
            for (row, code) in rvq.residuals[l].rows().into_iter().zip(rvq.codes.column(l)) {
                let code = *code as usize;
                counts[code] += 1.0;
                let mut acc = sums.row_mut(code);
                for (a, v) in acc.iter_mut().zip(row.iter()) {
                    *a += f64::from(*v);
                }
            }
            for j in 0..k {
                let count = decay * f64::from(self.ema_counts[l][j]) + (1.0 - decay) * counts[j];
                self.ema_counts[l][j] = count as f32;
                for t in 0..c {
                    let s = decay * f64::from(self.ema_sums[l][[j, t]]) + (1.0 - decay) * sums[[j, t]];
                    self.ema_sums[l][[j, t]] = s as f32;
                }
                let count = f64::from(self.ema_counts[l][j]);
                if count > threshold {
                    for t in 0..c {
                        self.codebooks[l][[j, t]] = (f64::from(self.ema_sums[l][[j, t]]) / count) as f32;
                    }
                }
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// All tensors in checkpoint order with their names, as `f32`.
    fn tensors(&self) -> Vec<(String, Vec<f32>)> {
        let f = |a: &Array2<f64>| a.iter().map(|v| *v as f32).collect::<Vec<f32>>();
        let f1 = |a: &Array1<f64>| a.iter().map(|v| *v as f32).collect::<Vec<f32>>();
        let mut out = vec![
            ("enc_w1".to_string(), f(&self.enc_w1)),
            ("enc_b1".into(), f1(&self.enc_b1)),
            ("enc_w2".into(), f(&self.enc_w2)),
            ("enc_b2".into(), f1(&self.enc_b2)),
            ("dec_w1".into(), f(&self.dec_w1)),
            ("dec_b1".into(), f1(&self.dec_b1)),
            ("dec_w2".into(), f(&self.dec_w2)),
            ("dec_b2".into(), f1(&self.dec_b2)),
        ];
        for l in 0..self.codebooks.len() {
            out.push((format!("codebook{l}"), self.codebooks[l].iter().copied().collect()));
            out.push((format!("ema_count{l}"), self.ema_counts[l].to_vec()));
            out.push((format!("ema_sum{l}"), self.ema_sums[l].iter().copied().collect()));
        }
        out
    }

    /// Bitwise equality of every tensor.
    pub fn bit_eq(&self, other: &CodecParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((_, x), (_, y))| {
                x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

/// Re-seeds codes whose EMA count dropped below the threshold to random
/// residual vectors of that level.
fn reseed_dead_codes(params: &mut CodecParams, sample: &RvqBatch, threshold: f64, rng: &mut crate::rng::Rng) -> usize {
    let mut reseeded = 0;
    for l in 0..params.codebooks.len() {
        let n = sample.residuals[l].nrows();
        if n == 0 {
            continue;
        }
        for j in 0..params.codebooks[l].nrows() {
            if f64::from(params.ema_counts[l][j]) < threshold {
                let pick = rng.random_range(0..n);
                let row = sample.residuals[l].row(pick).to_owned();
                params.codebooks[l].row_mut(j).assign(&row);
                params.ema_sums[l].row_mut(j).assign(&row);
                params.ema_counts[l][j] = 1.0;
                reseeded += 1;
            }
        }
    }
    reseeded
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_reconstruction: f64,
    pub val_mse: f64,
    pub dead_codes_reseeded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Every training setting here is a local default, not a published one.
    pub note: String,
}

/// Mean squared reconstruction error over the frames of a split.
pub fn reconstruction_mse(params: &CodecParams, frames: ArrayView2<'_, f32>) -> Result<f64> {
    let mut total = 0.0;
    let n = frames.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("no frames to reconstruct"));
    }
    let step = 4096;
    let mut start = 0;
    while start < n {
        let end = (start + step).min(n);
        let x = frames.slice(s![start..end, ..]).mapv(f64::from);
        let r = params.reconstruct(x.view())?;
        total += (&r - &x).iter().map(|v| v * v).sum::<f64>();
        start = end;
    }
    Ok(total / (n * frames.ncols()) as f64)
}

/// Mini-batch SGD on the encoder/decoder with EMA codebooks and early
/// stopping on validation reconstruction MSE. Returns the best snapshot.
pub fn train(
    mut params: CodecParams,
    train_frames: ArrayView2<'_, f32>,
    val_frames: ArrayView2<'_, f32>,
    config: &CodecConfig,
) -> Result<(CodecParams, TrainingLog)> {
    config.validate()?;
    let n = train_frames.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("codec training split is empty"));
    }
    if train_frames.ncols() != config.input_dim {
        return Err(Error::DimensionMismatch {
            expected: config.input_dim,
            found: train_frames.ncols(),
        });
    }
    let mut rng = child_rng(config.seed, 3);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog {
        note: "codec hyperparameters are local defaults (none are published)".into(),
        best_val_mse: f64::INFINITY,
        ..TrainingLog::default()
    };
    let mut best = params.clone();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut recon_sum = 0.0;
        let mut last = None;
        for chunk in order.chunks(config.batch_size) {
            let x = train_frames.select(Axis(0), chunk).mapv(f64::from);
            let (losses, grad, rvq) = params.loss_and_grad(x.view(), config.commitment_weight, None)?;
            if !losses.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "codec loss {} at epoch {epoch} (reconstruction {}, commitment {})",
                    losses.total, losses.reconstruction, losses.commitment
                )));
            }
            loss_sum += losses.total * chunk.len() as f64;
            recon_sum += losses.reconstruction * chunk.len() as f64;
            params.sgd_step(&grad, config.learning_rate);
            let rvq = rvq.expect("live quantisation");
            params.ema_update(&rvq, config.ema_decay, config.dead_code_threshold);
            last = Some(rvq);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite codec weights at epoch {epoch}")));
        }
        let reseeded = match &last {
            Some(rvq) => reseed_dead_codes(&mut params, rvq, config.dead_code_threshold, &mut rng),
            None => 0,
        };
        let val_mse = reconstruction_mse(&params, val_frames)?;
        if !val_mse.is_finite() {
            return Err(Error::Divergence(format!("validation MSE {val_mse} at epoch {epoch}")));
        }
        log::debug!("codec epoch {epoch}: loss {:.5} val mse {val_mse:.5}", loss_sum / n as f64);
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / n as f64,
            train_reconstruction: recon_sum / n as f64,
            val_mse,
            dead_codes_reseeded: reseeded,
        });
        if val_mse < log.best_val_mse {
            log.best_val_mse = val_mse;
            log.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}

/// A trained codec used as a quantiser.
#[derive(Debug, Clone)]
pub struct NeuralCodec {
    pub config: CodecConfig,
    pub params: CodecParams,
    pub log: TrainingLog,
}

impl NeuralCodec {
    /// Warm-starts and trains on the training split, early-stopping on the
    /// validation split.
    pub fn fit(train_split: &SplitView<'_>, val_split: &SplitView<'_>, config: &CodecConfig) -> Result<Self> {
        let train_frames = train_split.stacked_frames();
        let val_frames = val_split.stacked_frames();
        let params = init_params(config, train_frames.view())?;
        let (params, log) = train(params, train_frames.view(), val_frames.view(), config)?;
        Ok(NeuralCodec {
            config: config.clone(),
            params,
            log,
        })
    }

    pub fn encode_to_units(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        let frames = &utt.features.frames;
        if frames.ncols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: frames.ncols(),
            });
        }
        let rvq = self.params.quantise(frames.mapv(f64::from).view())?;
        let level_vectors = rvq
            .partial_sums
            .iter()
            .map(|sum| {
                if self.config.probe_raw_centroids {
                    sum.clone()
                } else {
                    self.params.decode(sum.mapv(f64::from).view()).mapv(|v| v as f32)
                }
            })
            .collect();
        let n = frames.nrows();
        Ok(QuantisedSequence {
            utterance_id: utt.id().to_string(),
            granularity: Granularity::Frame,
            level_sizes: self.config.codes_per_level.clone(),
            codes: rvq.codes,
            level_vectors,
            covered: vec![true; n],
            segment_index: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = load_checkpoint(path)?;
        Ok(NeuralCodec {
            config,
            params,
            log: TrainingLog::default(),
        })
    }
}

impl Quantiser for NeuralCodec {
    fn name(&self) -> String {
        let k = &self.config.codes_per_level;
        if k.len() == 1 {
            format!("vq-{}", k[0])
        } else if k.iter().all(|v| *v == k[0]) {
            format!("rvq-{}x{}", k[0], k.len())
        } else {
            format!(
                "rvq-{}",
                k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("+")
            )
        }
    }

    fn granularity(&self) -> Granularity {
        Granularity::Frame
    }

    fn level_sizes(&self) -> Vec<usize> {
        self.config.codes_per_level.clone()
    }

    fn quantise(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        self.encode_to_units(utt)
    }
}

/// Writes config and parameters in the `DSUN` layout.
pub fn save_checkpoint(path: &Path, config: &CodecConfig, params: &CodecParams) -> Result<()> {
    let mut w = Writer::new(MAGIC);
    for v in [config.input_dim, config.hidden_dim, config.code_dim, config.num_levels()] {
        w.u32(v as u32);
    }
    for &k in &config.codes_per_level {
        w.u32(k as u32);
    }
    for v in [
        config.commitment_weight,
        config.ema_decay,
        config.learning_rate,
        config.dead_code_threshold,
        config.init_scale,
    ] {
        w.u64(v.to_bits());
    }
    for v in [config.batch_size, config.max_epochs, config.patience, config.warm_start_factor] {
        w.u32(v as u32);
    }
    w.u64(config.seed);
    w.u32(u32::from(config.probe_raw_centroids));
    for (_, t) in params.tensors() {
        w.f32s(t.iter());
    }
    w.finish(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(CodecConfig, CodecParams)> {
    let mut r = Reader::open(path, MAGIC)?;
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let code_dim = r.u32()? as usize;
    let levels = r.u32()? as usize;
    if levels == 0 || levels > 64 {
        return Err(r.format(format!("implausible level count {levels}")));
    }
    let mut codes_per_level = Vec::with_capacity(levels);
    for _ in 0..levels {
        codes_per_level.push(r.u32()? as usize);
    }
    let mut reals = [0f64; 5];
    for v in &mut reals {
        *v = f64::from_bits(r.u64()?);
    }
    let mut ints = [0usize; 4];
    for v in &mut ints {
        *v = r.u32()? as usize;
    }
    let seed = r.u64()?;
    let probe_raw_centroids = r.u32()? != 0;
    let config = CodecConfig {
        input_dim,
        hidden_dim,
        code_dim,
        codes_per_level,
        commitment_weight: reals[0],
        ema_decay: reals[1],
        learning_rate: reals[2],
        dead_code_threshold: reals[3],
        init_scale: reals[4],
        batch_size: ints[0],
        max_epochs: ints[1],
        patience: ints[2],
        warm_start_factor: ints[3],
        seed,
        probe_raw_centroids,
    };
    config
        .validate()
        .map_err(|e| r.format(format!("invalid config block: {e}")))?;
    let (d, h, c) = (input_dim, hidden_dim, code_dim);
    let mut m2 = |rows: usize, cols: usize| -> Result<Array2<f64>> {
        let v = r.f32s(rows * cols)?;
        Ok(Array2::from_shape_vec((rows, cols), v.into_iter().map(f64::from).collect())
            .expect("declared shape"))
    };
    let enc_w1 = m2(h, d)?;
    let enc_b1 = m2(1, h)?.remove_axis(Axis(0));
    let enc_w2 = m2(c, h)?;
    let enc_b2 = m2(1, c)?.remove_axis(Axis(0));
    let dec_w1 = m2(h, c)?;
    let dec_b1 = m2(1, h)?.remove_axis(Axis(0));
    let dec_w2 = m2(d, h)?;
    let dec_b2 = m2(1, d)?.remove_axis(Axis(0));
    let mut codebooks = Vec::new();
    let mut ema_counts = Vec::new();
    let mut ema_sums = Vec::new();
    for &k in &config.codes_per_level {
        codebooks.push(Array2::from_shape_vec((k, c), r.f32s(k * c)?).expect("declared shape"));
        ema_counts.push(Array1::from(r.f32s(k)?));
        ema_sums.push(Array2::from_shape_vec((k, c), r.f32s(k * c)?).expect("declared shape"));
    }
    r.finish()?;
    let params = CodecParams {
        enc_w1,
        enc_b1,
        enc_w2,
        enc_b2,
        dec_w1,
        dec_b1,
        dec_w2,
        dec_b2,
        codebooks,
        ema_counts,
        ema_sums,
    };
    if !params.is_finite() {
        return Err(r_format(path, "non-finite parameter"));
    }
    Ok((config, params))
}

fn r_format(path: &Path, reason: &str) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}
