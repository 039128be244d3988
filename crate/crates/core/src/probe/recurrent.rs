//! Single-layer LSTM probe with task-specific linear heads for phone and
//! tone, classifying each vowel segment from the final hidden state.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{child_rng, Rng};

use super::logistic::{argmax, softmax_rows};
use super::{weight_table, weighted_f1, Labels, ProbeConfig, ProbeData, ProbeInputs, Task};

const EVAL_BATCH: usize = 256;

/// Variable-length sequences laid out step by step.
///
/// Sequences are stored longest first, so at step `t` the sequences still
/// running are a prefix: `steps[t]` holds only those rows. `order[r]` is the
/// caller's index of stored row `r`.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub steps: Vec<Array2<f64>>,
    pub lens: Vec<usize>,
    pub order: Vec<usize>,
}

impl SequenceBatch {
    pub fn from_sequences(seqs: &[&Array2<f64>]) -> Result<Self> {
        let dim = seqs.first().map_or(0, |s| s.ncols());
        for seq in seqs {
            if seq.nrows() == 0 {
                return Err(Error::EmptyInput("recurrent probe sequence has no frames"));
            }
            if seq.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: seq.ncols(),
                });
            }
        }
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].nrows()));
        let lens: Vec<usize> = order.iter().map(|&i| seqs[i].nrows()).collect();
        let max_len = lens.first().copied().unwrap_or(0);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let active = lens.iter().take_while(|&&l| l > t).count();
            let mut x = Array2::zeros((active, dim));
            for (r, &i) in order[..active].iter().enumerate() {
                x.row_mut(r).assign(&seqs[i].row(t));
            }
            steps.push(x);
        }
        Ok(SequenceBatch { steps, lens, order })
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    /// Reorders stored rows back to the caller's order.
    fn unsort(&self, stored: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(stored.raw_dim());
        for (r, &i) in self.order.iter().enumerate() {
            out.row_mut(i).assign(&stored.row(r));
        }
        out
    }

    /// Reorders caller rows into stored order.
    fn sort_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        rows.select(Axis(0), &self.order)
    }

    fn sort_vec<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| v[i]).collect()
    }
}

/// Affine classification head over the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `C x H`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros_like(&self) -> Self {
        Linear {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// LSTM weights (gate order input, forget, cell, output) and both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentProbeParams {
    /// `4H x D`.
    pub w_ih: Array2<f64>,
    /// `4H x H`.
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
    pub phone_head: Linear,
    pub tone_head: Linear,
}

struct Step {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates of the sequences still running, `n_t x 4H`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform(rng: &mut Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

/// Per-row class-weighted cross-entropy `sum w CE / sum w` over the rows with
/// a positive weight; returns the loss and `dL/dlogits`.
fn weighted_ce(logits: &Array2<f64>, targets: &[usize], weights: &[f64]) -> (f64, Array2<f64>) {
    let total: f64 = weights.iter().sum();
    let mut grad = logits.clone();
    if total <= 0.0 {
        grad.fill(0.0);
        return (0.0, grad);
    }
    softmax_rows(&mut grad);
    let mut loss = 0.0;
    for (i, (&c, &w)) in targets.iter().zip(weights).enumerate() {
        let mut row = grad.row_mut(i);
        if w == 0.0 {
            row.fill(0.0);
            continue;
        }
        let l = logits.row(i);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - l[c]);
        row[c] -= 1.0;
        row.mapv_inplace(|v| v * w / total);
    }
    (loss / total, grad)
}

impl RecurrentProbeParams {
    /// Uniform initialisation in `±1/sqrt(H)` for every parameter.
    pub fn init(input_dim: usize, hidden: usize, phone_classes: usize, tone_classes: usize, seed: u64) -> Self {
        let mut rng = child_rng(seed, 0);
        let k = 1.0 / (hidden as f64).sqrt();
        let w_ih = uniform(&mut rng, (4 * hidden, input_dim), k);
        let w_hh = uniform(&mut rng, (4 * hidden, hidden), k);
        let bias = uniform(&mut rng, (4 * hidden, 1), k).remove_axis(Axis(1));
        let mut head = |c: usize| Linear {
            weights: uniform(&mut rng, (c, hidden), k),
            bias: uniform(&mut rng, (c, 1), k).remove_axis(Axis(1)),
        };
        let phone_head = head(phone_classes);
        let tone_head = head(tone_classes);
        RecurrentProbeParams {
            w_ih,
            w_hh,
            bias,
            phone_head,
            tone_head,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        RecurrentProbeParams {
            w_ih: Array2::zeros(self.w_ih.raw_dim()),
            w_hh: Array2::zeros(self.w_hh.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            phone_head: self.phone_head.zeros_like(),
            tone_head: self.tone_head.zeros_like(),
        }
    }

    /// Every parameter array, in a fixed order.
    pub fn tensors(&self) -> Vec<ndarray::ArrayViewD<'_, f64>> {
        vec![
            self.w_ih.view().into_dyn(),
            self.w_hh.view().into_dyn(),
            self.bias.view().into_dyn(),
            self.phone_head.weights.view().into_dyn(),
            self.phone_head.bias.view().into_dyn(),
            self.tone_head.weights.view().into_dyn(),
            self.tone_head.bias.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<ndarray::ArrayViewMutD<'_, f64>> {
        vec![
            self.w_ih.view_mut().into_dyn(),
            self.w_hh.view_mut().into_dyn(),
            self.bias.view_mut().into_dyn(),
            self.phone_head.weights.view_mut().into_dyn(),
            self.phone_head.bias.view_mut().into_dyn(),
            self.tone_head.weights.view_mut().into_dyn(),
            self.tone_head.bias.view_mut().into_dyn(),
        ]
    }

    fn scaled_add(&mut self, alpha: f64, other: &RecurrentProbeParams) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Final hidden states in stored (longest-first) order, and the
    /// per-step caches when `keep`.
    fn forward(&self, batch: &SequenceBatch, keep: bool) -> (Array2<f64>, Vec<Step>) {
        let b = batch.len();
        let h = self.hidden_size();
        let mut hs = Array2::<f64>::zeros((b, h));
        let mut cs = Array2::<f64>::zeros((b, h));
        let mut steps = Vec::new();
        for x in &batch.steps {
            let n = x.nrows();
            let h_prev = hs.slice(s![..n, ..]).to_owned();
            let c_prev = cs.slice(s![..n, ..]).to_owned();
            let gates = x.dot(&self.w_ih.t()) + h_prev.dot(&self.w_hh.t()) + &self.bias;
            // products of thin matrices can come back column-major
            let mut gates = if gates.is_standard_layout() {
                gates
            } else {
                gates.as_standard_layout().into_owned()
            };
            let mut tanh_c = Array2::zeros((n, h));
            for r in 0..n {
                let mut g = gates.row_mut(r);
                let g = g.as_slice_mut().expect("contiguous row");
                for v in g[..2 * h].iter_mut() {
                    *v = sigmoid(*v);
                }
                for v in g[2 * h..3 * h].iter_mut() {
                    *v = v.tanh();
                }
                for v in g[3 * h..].iter_mut() {
                    *v = sigmoid(*v);
                }
                for j in 0..h {
                    let c = g[h + j] * c_prev[[r, j]] + g[j] * g[2 * h + j];
                    let tc = c.tanh();
                    cs[[r, j]] = c;
                    tanh_c[[r, j]] = tc;
                    hs[[r, j]] = g[3 * h + j] * tc;
                }
            }
            if keep {
                steps.push(Step {
                    h_prev,
                    c_prev,
                    gates,
                    tanh_c,
                });
            }
        }
        (hs, steps)
    }

    /// Final hidden state of every sequence, in the caller's order.
    pub fn final_hidden(&self, batch: &SequenceBatch) -> Array2<f64> {
        batch.unsort(&self.forward(batch, false).0)
    }

    pub fn logits(&self, batch: &SequenceBatch, task: Task) -> Array2<f64> {
        let h = self.final_hidden(batch);
        let head = match task {
            Task::Phone => &self.phone_head,
            Task::Tone => &self.tone_head,
        };
        h.dot(&head.weights.t()) + &head.bias
    }

    /// Class-weighted cross-entropy of both heads, summed, and its gradient
    /// with respect to every parameter. `tone_w` is zero for rows without a
    /// tone label. `dropout` multiplies the final hidden state when given.
    /// Labels, weights and mask rows follow the caller's order.
    pub fn loss_and_grad(
        &self,
        batch: &SequenceBatch,
        phone: &[usize],
        phone_w: &[f64],
        tone: &[usize],
        tone_w: &[f64],
        dropout: Option<&Array2<f64>>,
    ) -> (f64, RecurrentProbeParams) {
        let (h_final, steps) = self.forward(batch, true);
        let (phone, phone_w) = (batch.sort_vec(phone), batch.sort_vec(phone_w));
        let (tone, tone_w) = (batch.sort_vec(tone), batch.sort_vec(tone_w));
        let mask = dropout.map(|m| batch.sort_rows(m));
        let hd = match &mask {
            Some(m) => &h_final * m,
            None => h_final,
        };
        let mut grad = self.zeros_like();
        let phone_logits = hd.dot(&self.phone_head.weights.t()) + &self.phone_head.bias;
        let (phone_loss, d_phone) = weighted_ce(&phone_logits, &phone, &phone_w);
        let mut dh = d_phone.dot(&self.phone_head.weights);
        grad.phone_head.weights = d_phone.t().dot(&hd);
        grad.phone_head.bias = d_phone.sum_axis(Axis(0));
        let mut loss = phone_loss;
        if !self.tone_head.bias.is_empty() {
            let tone_logits = hd.dot(&self.tone_head.weights.t()) + &self.tone_head.bias;
            let (tone_loss, d_tone) = weighted_ce(&tone_logits, &tone, &tone_w);
            dh += &d_tone.dot(&self.tone_head.weights);
            grad.tone_head.weights = d_tone.t().dot(&hd);
            grad.tone_head.bias = d_tone.sum_axis(Axis(0));
            loss += tone_loss;
        }
        if let Some(m) = &mask {
            dh *= m;
        }

        let b = batch.len();
        let h = self.hidden_size();
        let mut dc = Array2::<f64>::zeros((b, h));
        for (t, step) in steps.iter().enumerate().rev() {
            let n = step.gates.nrows();
            let mut da = Array2::<f64>::zeros((n, 4 * h));
            for r in 0..n {
                let g = step.gates.row(r);
                let mut d = da.row_mut(r);
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = step.tanh_c[[r, j]];
                    let dhv = dh[[r, j]];
                    let dcv = dc[[r, j]] + dhv * o * (1.0 - tc * tc);
                    d[j] = dcv * gg * i * (1.0 - i);
                    d[h + j] = dcv * step.c_prev[[r, j]] * f * (1.0 - f);
                    d[2 * h + j] = dcv * i * (1.0 - gg * gg);
                    d[3 * h + j] = dhv * tc * o * (1.0 - o);
                    dc[[r, j]] = dcv * f;
                }
            }
            grad.w_ih += &da.t().dot(&batch.steps[t]);
            grad.w_hh += &da.t().dot(&step.h_prev);
            grad.bias += &da.sum_axis(Axis(0));
            let dh_prev = da.dot(&self.w_hh);
            dh.slice_mut(s![..n, ..]).assign(&dh_prev);
        }
        (loss, grad)
    }

    /// Predicted classes of both heads for every row of `data`.
    pub fn predict_both(&self, data: &ProbeData) -> Result<(Vec<usize>, Vec<usize>)> {
        let seqs = sequences(data)?;
        let parts: Vec<Result<(Vec<usize>, Vec<usize>)>> = seqs
            .par_chunks(EVAL_BATCH)
            .map(|chunk| {
                let refs: Vec<&Array2<f64>> = chunk.iter().collect();
                let batch = SequenceBatch::from_sequences(&refs)?;
                let hs = self.final_hidden(&batch);
                let p = hs.dot(&self.phone_head.weights.t()) + &self.phone_head.bias;
                let t = hs.dot(&self.tone_head.weights.t()) + &self.tone_head.bias;
                Ok((
                    p.rows().into_iter().map(argmax).collect(),
                    t.rows().into_iter().map(argmax).collect(),
                ))
            })
            .collect();
        let mut phone = Vec::with_capacity(seqs.len());
        let mut tone = Vec::with_capacity(seqs.len());
        for part in parts {
            let (p, t) = part?;
            phone.extend(p);
            tone.extend(t);
        }
        Ok((phone, tone))
    }

    /// Predicted classes of one head for every row of `data`.
    pub fn predict(&self, data: &ProbeData, task: Task) -> Result<Vec<usize>> {
        let (p, t) = self.predict_both(data)?;
        Ok(match task {
            Task::Phone => p,
            Task::Tone => t,
        })
    }
}

fn sequences(data: &ProbeData) -> Result<&[Array2<f64>]> {
    match &data.inputs {
        ProbeInputs::Sequences(s) => Ok(s),
        ProbeInputs::Vectors(_) => Err(Error::InvalidConfig(
            "the recurrent probe takes frame sequences".into(),
        )),
    }
}

/// Best validation snapshots per task from one joint training run.
#[derive(Debug, Clone)]
pub struct RecurrentTraining {
    pub phone: RecurrentProbeParams,
    pub tone: RecurrentProbeParams,
    /// Epoch of the best snapshot, phone then tone.
    pub best_epoch: [usize; 2],
    pub best_val_f1: [f64; 2],
    pub epochs_run: usize,
    pub train_loss: Vec<f64>,
    /// Validation weighted F1 per epoch, phone then tone.
    pub val_history: Vec<[f64; 2]>,
}

fn val_f1(truth: &[(usize, usize)], pred: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Ok(0.0);
    }
    let y: Vec<usize> = truth.iter().map(|(_, c)| *c).collect();
    let p: Vec<usize> = truth.iter().map(|(i, _)| pred[*i]).collect();
    weighted_f1(&y, &p)
}

/// Trains both heads jointly with plain SGD on the summed class-weighted
/// losses. Each task keeps the snapshot with the best validation weighted
/// F1; training ends when both tasks have gone `patience` epochs without
/// improving, or at `max_epochs`.
pub fn train_recurrent(
    train: &ProbeData,
    val: &ProbeData,
    labels: &Labels,
    config: &ProbeConfig,
) -> Result<RecurrentTraining> {
    config.validate()?;
    let seqs = sequences(train)?;
    if seqs.is_empty() {
        return Err(Error::EmptyInput("recurrent probe training set is empty"));
    }
    let n_phone = labels.phone.len();
    let n_tone = labels.tone.len();
    let phone_table = weight_table(&train.phone, n_phone)?;
    let (_, tone_labels) = train.task_labels(Task::Tone);
    let tone_table = if tone_labels.is_empty() {
        vec![0.0; n_tone]
    } else {
        weight_table(&tone_labels, n_tone)?
    };

    let mut params =
        RecurrentProbeParams::init(seqs[0].ncols(), config.hidden_size, n_phone, n_tone, config.seed);
    let mut rng = child_rng(config.seed, 1);
    let keep = 1.0 - config.dropout;
    let batch_size = if config.batch_size == 0 { seqs.len() } else { config.batch_size };

    let val_truth: [Vec<(usize, usize)>; 2] = [
        val.phone.iter().copied().enumerate().collect(),
        val.tone
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (i, t)))
            .collect(),
    ];
    let mut best = [params.clone(), params.clone()];
    let mut best_f1 = [f64::NEG_INFINITY; 2];
    let mut best_epoch = [0usize; 2];
    let mut stale = [0usize; 2];
    // a task with nothing to validate on never holds training open
    let active = [n_phone > 1 && !val_truth[0].is_empty(), n_tone > 1 && !val_truth[1].is_empty()];
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut train_loss = Vec::new();
    let mut val_history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let refs: Vec<&Array2<f64>> = chunk.iter().map(|&i| &seqs[i]).collect();
            let batch = SequenceBatch::from_sequences(&refs)?;
            let phone: Vec<usize> = chunk.iter().map(|&i| train.phone[i]).collect();
            let phone_w: Vec<f64> = phone.iter().map(|&c| phone_table[c]).collect();
            let tone: Vec<usize> = chunk.iter().map(|&i| train.tone[i].unwrap_or(0)).collect();
            let tone_w: Vec<f64> = chunk
                .iter()
                .map(|&i| train.tone[i].map_or(0.0, |t| tone_table[t]))
                .collect();
            let mask = (config.dropout > 0.0).then(|| {
                Array2::from_shape_simple_fn((chunk.len(), config.hidden_size), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            let (loss, grad) = params.loss_and_grad(&batch, &phone, &phone_w, &tone, &tone_w, mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "recurrent probe loss {loss} at epoch {epoch}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            params.scaled_add(-config.learning_rate, &grad);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite LSTM weights at epoch {epoch}")));
        }
        train_loss.push(epoch_loss / seqs.len() as f64);

        let (phone_pred, tone_pred) = params.predict_both(val)?;
        let f1 = [val_f1(&val_truth[0], &phone_pred)?, val_f1(&val_truth[1], &tone_pred)?];
        val_history.push(f1);
        log::debug!("recurrent probe epoch {epoch}: loss {:.4} val f1 {:.4}/{:.4}", train_loss[epoch - 1], f1[0], f1[1]);
        for task in 0..2 {
            if f1[task] > best_f1[task] {
                best_f1[task] = f1[task];
                best[task] = params.clone();
                best_epoch[task] = epoch;
                stale[task] = 0;
            } else {
                stale[task] += 1;
            }
        }
        let done = (0..2).all(|t| !active[t] || stale[t] >= config.patience);
        if done {
            break;
        }
    }
    let [phone, tone] = best;
    Ok(RecurrentTraining {
        phone,
        tone,
        best_epoch,
        best_val_f1: best_f1,
        epochs_run,
        train_loss,
        val_history,
    })
}
