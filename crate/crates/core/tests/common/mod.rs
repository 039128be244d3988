//! Independent oracles and randomized checks shared by the invariant,
//! format and acceptance test targets. Every check takes a seed, builds its
//! own instance and returns a description of the first discrepancy.

#![allow(dead_code)]

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tonequant_core::codec::{self, CodecConfig};
use tonequant_core::data::{
    generate_in_memory, load_feature_file, mean_pool_segment, save_feature_file, FeatureSequence,
    Split, SplitCounts, Stage, SyntheticSpec,
};
use tonequant_core::kmeans::{self, Codebook, KMeansConfig};
use tonequant_core::probe::{weighted_f1, LogisticParams, RecurrentProbeParams, SequenceBatch};
use tonequant_core::quantise::{fit_mean_pooled, fit_residual, fit_svc, Quantiser, ResidualVariant};
use tonequant_core::Corpus;

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Squared Euclidean distance, f32 inputs accumulated in f64 left to right.
pub fn oracle_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = f64::from(a[i]) - f64::from(b[i]);
        s += d * d;
    }
    s
}

/// Linear scan; the first of equally near centroids wins.
pub fn oracle_nearest(centroids: &Array2<f32>, x: &[f32]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = oracle_distance(c.as_slice().unwrap(), x);
        if d < best.1 {
            best = (k as u32, d);
        }
    }
    best
}

pub fn oracle_inertia(centroids: &Array2<f32>, data: &Array2<f32>) -> f64 {
    data.rows()
        .into_iter()
        .map(|r| oracle_nearest(centroids, r.as_slice().unwrap()).1)
        .sum()
}

/// Blobs plus exact duplicates and integer grid points, which create ties.
pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f32> {
    let blobs = r.random_range(1..6usize);
    let centres = Array2::from_shape_fn((blobs, d), |_| r.random_range(-5.0f32..5.0));
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        match r.random_range(0..4) {
            0 => out.row_mut(i).mapv_inplace(|_| r.random_range(-2i32..=2) as f32),
            1 if i > 0 => {
                let j = r.random_range(0..i);
                let row = out.row(j).to_owned();
                out.row_mut(i).assign(&row);
            }
            _ => {
                let b = r.random_range(0..blobs);
                for j in 0..d {
                    out[[i, j]] = centres[[b, j]] + r.random_range(-0.5f32..0.5);
                }
            }
        }
    }
    out
}

/// Lloyd's iterations never increase inertia, and the reported inertia is the
/// true inertia of the returned centroids, no worse than their seeding.
pub fn lloyd_instance(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..150usize);
    let d = r.random_range(1..6usize);
    let k = r.random_range(1..=n.min(12));
    let data = random_points(&mut r, n, d);
    let config = KMeansConfig::new(k).with_seed(seed).with_max_iters(50);
    let config = KMeansConfig { rel_tol: 0.0, ..config };
    let cb = kmeans::fit(data.view(), &config).map_err(|e| format!("fit failed: {e}"))?;
    let stats = &cb.training_stats;
    for w in stats.inertia_trace.windows(2) {
        if w[1] > w[0] {
            return Err(format!("inertia rose from {} to {}", w[0], w[1]));
        }
    }
    let oracle = oracle_inertia(&cb.centroids, &data);
    if (oracle - stats.final_inertia).abs() > 1e-9 * oracle.max(1.0) {
        return Err(format!("reported inertia {} but oracle says {oracle}", stats.final_inertia));
    }
    let init = kmeans::kmeanspp_init(data.view(), &config).map_err(|e| e.to_string())?;
    let init_inertia = oracle_inertia(&init, &data);
    if stats.final_inertia > init_inertia * (1.0 + 1e-12) {
        return Err(format!("final {} worse than seeding {init_inertia}", stats.final_inertia));
    }
    if stats.inertia_trace.first().copied() != Some(init_inertia) {
        // the first trace entry is the seeding's inertia
        let first = stats.inertia_trace[0];
        if (first - init_inertia).abs() > 1e-9 * init_inertia.max(1.0) {
            return Err(format!("trace starts at {first}, seeding inertia is {init_inertia}"));
        }
    }
    Ok(())
}

/// Single and batched assignment agree exactly with a linear scan on
/// `count` vectors, including exact centroid hits and ties.
pub fn assign_instance(seed: u64, count: usize) -> Check {
    let mut r = rng(seed);
    let d = r.random_range(1..12usize);
    let k = r.random_range(1..40usize);
    let mut centroids = random_points(&mut r, k, d);
    if k > 2 && r.random_bool(0.5) {
        let row = centroids.row(0).to_owned();
        centroids.row_mut(k - 1).assign(&row);
    }
    let mut data = random_points(&mut r, count, d);
    for i in 0..count / 10 {
        let row = centroids.row(r.random_range(0..k)).to_owned();
        data.row_mut(i * 10).assign(&row);
    }
    let cb = Codebook::from_centroids(centroids.clone(), 1).map_err(|e| e.to_string())?;
    let batch = cb.assign_batch(data.view()).map_err(|e| e.to_string())?;
    for (i, row) in data.rows().into_iter().enumerate() {
        let (code, dist) = oracle_nearest(&centroids, row.as_slice().unwrap());
        let (single, _) = cb.assign(row).map_err(|e| e.to_string())?;
        if single != code || batch.codes[i] != code {
            return Err(format!("vector {i}: oracle {code}, assign {single}, batch {}", batch.codes[i]));
        }
        if batch.distances[i].to_bits() != dist.to_bits() {
            return Err(format!("vector {i}: distance {} vs oracle {dist}", batch.distances[i]));
        }
    }
    Ok(())
}

/// Support-weighted F1 from explicit per-class counting.
pub fn oracle_weighted_f1(y_true: &[usize], y_pred: &[usize]) -> f64 {
    let mut classes: Vec<usize> = y_true.iter().chain(y_pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let support = tp + fn_;
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += support as f64 * f1;
    }
    total / y_true.len() as f64
}

pub fn f1_instance(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..80usize);
    let classes = r.random_range(1..9usize);
    let y_true: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let y_pred: Vec<usize> = y_true
        .iter()
        .map(|&t| if r.random_bool(0.6) { t } else { r.random_range(0..classes + 1) })
        .collect();
    let got = weighted_f1(&y_true, &y_pred).map_err(|e| e.to_string())?;
    let want = oracle_weighted_f1(&y_true, &y_pred);
    if got.to_bits() != want.to_bits() {
        return Err(format!("weighted F1 {got} vs oracle {want} for {y_true:?} / {y_pred:?}"));
    }
    Ok(())
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(params: &mut [f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = loss(params);
            params[i] = orig - h;
            let down = loss(params);
            params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error of the class-weighted logistic gradient.
pub fn logistic_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, d, c) = (r.random_range(2..12usize), r.random_range(1..6usize), r.random_range(2..5usize));
    let x = Array2::from_shape_fn((n, d), |_| r.random_range(-2.0..2.0));
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.2..3.0)).collect();
    let params = LogisticParams {
        weights: Array2::from_shape_fn((c, d), |_| r.random_range(-1.0..1.0)),
        bias: Array1::from_shape_fn(c, |_| r.random_range(-1.0..1.0)),
    };
    let (_, grad) = params.loss_and_grad(x.view(), &y, &w);
    let mut flat: Vec<f64> = params.weights.iter().chain(params.bias.iter()).copied().collect();
    let numeric = central_difference(&mut flat, 1e-6, |v| {
        let p = LogisticParams {
            weights: Array2::from_shape_vec((c, d), v[..c * d].to_vec()).unwrap(),
            bias: Array1::from(v[c * d..].to_vec()),
        };
        p.loss_and_grad(x.view(), &y, &w).0
    });
    let analytic: Vec<f64> = grad.weights.iter().chain(grad.bias.iter()).copied().collect();
    rel_err(&analytic, &numeric)
}

fn flatten(p: &RecurrentProbeParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).collect()
}

fn unflatten(p: &mut RecurrentProbeParams, v: &[f64]) {
    let mut it = v.iter();
    for mut t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x = *it.next().unwrap();
        }
    }
}

/// Relative error of the LSTM probe gradient on variable-length sequences
/// with per-row class weights and rows lacking a tone label.
pub fn recurrent_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (d, h) = (r.random_range(1..4usize), r.random_range(1..4usize));
    let (pc, tc) = (r.random_range(2..4usize), r.random_range(2..4usize));
    let n = r.random_range(1..5usize);
    let seqs: Vec<Array2<f64>> = (0..n)
        .map(|_| {
            let len = r.random_range(1..5usize);
            Array2::from_shape_fn((len, d), |_| r.random_range(-1.5..1.5))
        })
        .collect();
    let refs: Vec<&Array2<f64>> = seqs.iter().collect();
    let batch = SequenceBatch::from_sequences(&refs).unwrap();
    let phone: Vec<usize> = (0..n).map(|_| r.random_range(0..pc)).collect();
    let tone: Vec<usize> = (0..n).map(|_| r.random_range(0..tc)).collect();
    let phone_w: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
    let mut tone_w: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
    if n > 1 {
        tone_w[0] = 0.0;
    }
    let mut params = RecurrentProbeParams::init(d, h, pc, tc, seed);
    for mut t in params.tensors_mut() {
        t.mapv_inplace(|_| r.random_range(-0.8..0.8));
    }
    let (_, grad) = params.loss_and_grad(&batch, &phone, &phone_w, &tone, &tone_w, None);
    let mut flat = flatten(&params);
    let mut probe = params.clone();
    let numeric = central_difference(&mut flat, 1e-5, |v| {
        unflatten(&mut probe, v);
        probe.loss_and_grad(&batch, &phone, &phone_w, &tone, &tone_w, None).0
    });
    rel_err(&flatten(&grad), &numeric)
}

fn tiny_codec_config(r: &mut ChaCha8Rng, seed: u64) -> CodecConfig {
    let d = r.random_range(1..5usize);
    let levels = r.random_range(1..4usize);
    CodecConfig {
        input_dim: d,
        hidden_dim: r.random_range(1..9usize),
        code_dim: r.random_range(1..5usize),
        codes_per_level: (0..levels).map(|_| r.random_range(1..6usize)).collect(),
        init_scale: 0.3,
        seed,
        ..CodecConfig::new(d, 1, 1)
    }
}

/// Relative error between the encoder-bias gradient, which reaches the
/// encoder through the straight-through estimator, and a finite difference of
/// the decoder loss taken directly in the quantised space. They agree exactly
/// when the estimator's Jacobian is the identity.
pub fn straight_through_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let config = tiny_codec_config(&mut r, seed);
    // warm start needs at least as many rows as codes per level
    let n = r.random_range(6..12usize);
    let x = Array2::from_shape_fn((n, config.input_dim), |_| r.random_range(-1.0f64..1.0));
    let frames = x.mapv(|v| v as f32);
    let mut params = codec::init_params(&config, frames.view()).unwrap();
    // nonzero biases keep pre-activations off the ReLU kink at exactly zero
    params.enc_b1.mapv_inplace(|_| r.random_range(0.1..0.5));
    params.dec_b1.mapv_inplace(|_| r.random_range(-0.5..0.5));
    let (_, grad, _) = params.loss_and_grad(x.view(), 0.0, None).unwrap();
    let zq = params.quantise(x.view()).unwrap().z_q.mapv(f64::from);
    let loss = |zq: &Array2<f64>| {
        let recon = params.decode(zq.view());
        (&recon - &x).mapv(|v| v * v).mean().unwrap()
    };
    let h = 1e-6;
    let numeric: Vec<f64> = (0..zq.ncols())
        .map(|j| {
            let mut up = zq.clone();
            up.column_mut(j).mapv_inplace(|v| v + h);
            let mut down = zq.clone();
            down.column_mut(j).mapv_inplace(|v| v - h);
            (loss(&up) - loss(&down)) / (2.0 * h)
        })
        .collect();
    rel_err(grad.enc_b2.as_slice().unwrap(), &numeric)
}

pub fn tiny_corpus(seed: u64) -> Corpus {
    let mut r = rng(seed);
    let dim = r.random_range(2..7usize);
    let spec = SyntheticSpec {
        num_phones: r.random_range(2..7),
        num_consonants: r.random_range(0..3),
        num_tones: r.random_range(1..4),
        dim,
        tone_subspace_dim: r.random_range(1..=dim),
        speaker_dim: r.random_range(0..=dim.min(2)),
        syllables_per_utterance: (2, 4),
        utterances: SplitCounts {
            train: r.random_range(6..14),
            validation: 2,
            test: 2,
        },
        seed,
        ..SyntheticSpec::default()
    };
    generate_in_memory(&spec).unwrap().0
}

/// Every covered SVC frame vector is exactly the f32 midpoint of its frame
/// centroid and its segment's centroid, and both codes are nearest-centroid.
pub fn svc_midpoint_instance(seed: u64) -> Check {
    let corpus = tiny_corpus(seed);
    let train = corpus.view(Stage::Fit, Split::Train).unwrap();
    let mut r = rng(seed ^ 0x5EED);
    let segments = train.vowel_segments().len();
    let kf = r.random_range(1..=6usize.min(train.num_frames()));
    let ks = r.random_range(1..=4usize.min(segments));
    let svc = fit_svc(&train, kf, ks, seed).map_err(|e| e.to_string())?;
    let fc = &svc.frame.centroids;
    let sc = &svc.segment.centroids;
    for utt in &train.utterances {
        let q = svc.quantise(utt).map_err(|e| e.to_string())?;
        let cover = utt.vowel_coverage();
        for t in 0..q.num_positions() {
            let frame = utt.features.frames.row(t);
            let (fcode, _) = oracle_nearest(fc, frame.as_slice().unwrap());
            if q.codes[[t, 0]] != fcode {
                return Err(format!("{} frame {t}: code {} vs oracle {fcode}", utt.id(), q.codes[[t, 0]]));
            }
            let fused = q.level_vectors[1].row(t);
            let Some(s) = cover[t] else {
                if q.covered[t] || fused != fc.row(fcode as usize) {
                    return Err(format!("{} frame {t}: uncovered frame not the frame centroid", utt.id()));
                }
                continue;
            };
            let pooled = mean_pool_segment(utt.segment_frames(&utt.segments[s])).unwrap();
            let (scode, _) = oracle_nearest(sc, pooled.as_slice().unwrap());
            if q.codes[[t, 1]] != scode {
                return Err(format!("{} frame {t}: segment code {} vs oracle {scode}", utt.id(), q.codes[[t, 1]]));
            }
            for j in 0..fused.len() {
                let want = (fc[[fcode as usize, j]] + sc[[scode as usize, j]]) / 2.0;
                if fused[j].to_bits() != want.to_bits() {
                    return Err(format!("{} frame {t} dim {j}: {} vs midpoint {want}", utt.id(), fused[j]));
                }
            }
        }
    }
    Ok(())
}

/// Squared error of pooled training segments against their segment-level
/// probe vectors: residual K-means (phone + residual) never does worse than
/// mean-pooled K-means with the phone-level codebook alone.
pub fn residual_error_instance(seed: u64) -> Check {
    let corpus = tiny_corpus(seed);
    let train = corpus.view(Stage::Fit, Split::Train).unwrap();
    let segments = train.vowel_segments().len();
    let mut r = rng(seed ^ 0xBEEF);
    let kp = r.random_range(1..=5usize.min(segments));
    let kr = r.random_range(1..=5usize.min(segments));
    let pooled_q = fit_mean_pooled(&train, kp, seed).map_err(|e| e.to_string())?;
    let residual_q =
        fit_residual(&train, kp, kr, ResidualVariant::Segmental, false, seed).map_err(|e| e.to_string())?;
    let (mut pooled_err, mut residual_err) = (0.0f64, 0.0f64);
    for utt in &train.utterances {
        let a = pooled_q.quantise(utt).map_err(|e| e.to_string())?;
        let b = residual_q.quantise(utt).map_err(|e| e.to_string())?;
        let targets: Vec<Array1<f32>> = utt
            .segments
            .iter()
            .filter(|s| s.is_vowel)
            .map(|s| mean_pool_segment(utt.segment_frames(s)).unwrap())
            .collect();
        for (i, v) in targets.iter().enumerate() {
            let v = v.as_slice().unwrap();
            pooled_err += oracle_distance(a.probe_vectors().row(i).as_slice().unwrap(), v);
            residual_err += oracle_distance(b.probe_vectors().row(i).as_slice().unwrap(), v);
        }
    }
    if residual_err > pooled_err * (1.0 + 1e-6) + 1e-9 {
        return Err(format!("residual error {residual_err} exceeds mean-pooled error {pooled_err}"));
    }
    Ok(())
}

fn random_shape(r: &mut ChaCha8Rng, i: u64) -> (usize, usize) {
    match i % 4 {
        0 => (1, r.random_range(1..20)),
        1 => (r.random_range(1..20), 1),
        2 => (1, 1),
        _ => (r.random_range(1..40), r.random_range(1..40)),
    }
}

fn random_f32(r: &mut ChaCha8Rng) -> f32 {
    match r.random_range(0..6) {
        0 => 0.0,
        1 => -0.0,
        2 => f32::MIN_POSITIVE / 4.0,
        3 => f32::from_bits(r.random::<u32>() & 0x7F7F_FFFF),
        _ => r.random_range(-1e3f32..1e3),
    }
}

pub fn dsuf_instance(seed: u64, dir: &Path) -> Check {
    let mut r = rng(seed);
    let (t, d) = random_shape(&mut r, seed);
    let frames = Array2::from_shape_simple_fn((t, d), || random_f32(&mut r));
    let id = format!("utt{seed}");
    let seq = FeatureSequence::new(id.clone(), frames).map_err(|e| e.to_string())?;
    let path = dir.join(format!("{id}.dsuf"));
    save_feature_file(&seq, &path).map_err(|e| e.to_string())?;
    let back = load_feature_file(&path).map_err(|e| e.to_string())?;
    if !seq.bit_eq(&back) {
        return Err(format!("DSUF {t}x{d} changed on round trip"));
    }
    Ok(())
}

pub fn dsuc_instance(seed: u64, dir: &Path) -> Check {
    let mut r = rng(seed);
    let (k, d) = random_shape(&mut r, seed);
    let centroids = Array2::from_shape_simple_fn((k, d), || random_f32(&mut r));
    let level = r.random_range(1..4u32);
    let cb = Codebook::from_centroids(centroids, level).map_err(|e| e.to_string())?;
    let path = dir.join(format!("c{seed}.dsuc"));
    cb.save(&path).map_err(|e| e.to_string())?;
    let back = Codebook::load(&path).map_err(|e| e.to_string())?;
    if !cb.bit_eq(&back) {
        return Err(format!("DSUC {k}x{d} level {level} changed on round trip"));
    }
    Ok(())
}

pub fn dsun_instance(seed: u64, dir: &Path) -> Check {
    let mut r = rng(seed);
    let mut config = tiny_codec_config(&mut r, seed);
    if seed % 4 == 2 {
        config.input_dim = 1;
        config.code_dim = 1;
        config.codes_per_level = vec![1];
    }
    config.commitment_weight = r.random_range(0.0..1.0);
    config.probe_raw_centroids = r.random_bool(0.5);
    let mut params = codec::init_weights(&config).map_err(|e| e.to_string())?;
    for (cb, (count, sum)) in params
        .codebooks
        .iter_mut()
        .zip(params.ema_counts.iter_mut().zip(params.ema_sums.iter_mut()))
    {
        cb.mapv_inplace(|_| random_f32(&mut r));
        count.mapv_inplace(|_| r.random_range(0.0f32..10.0));
        sum.mapv_inplace(|_| random_f32(&mut r));
    }
    let path = dir.join(format!("n{seed}.dsun"));
    codec::save_checkpoint(&path, &config, &params).map_err(|e| e.to_string())?;
    let (cfg_back, params_back) = codec::load_checkpoint(&path).map_err(|e| e.to_string())?;
    if cfg_back != config {
        return Err(format!("DSUN config changed: {config:?} vs {cfg_back:?}"));
    }
    if !params.bit_eq(&params_back) {
        return Err("DSUN parameters changed on round trip".into());
    }
    Ok(())
}

/// Shuffles `0..n` deterministically; used to pick random subsets.
pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng(seed));
    v
}

/// Column means of a matrix.
pub fn column_means(m: &Array2<f32>) -> Array1<f32> {
    m.map(|v| f64::from(*v)).mean_axis(Axis(0)).unwrap().mapv(|v| v as f32)
}
