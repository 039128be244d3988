//! Multinomial logistic regression probe for one vector per segment.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from;

use super::{weight_table, weighted_f1, ProbeConfig, ProbeData, ProbeInputs, Task};

/// Affine map `D -> C` followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    /// `C x D`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

/// Row-wise softmax in place, shifted by the row maximum.
pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn vectors(data: &ProbeData) -> Result<&Array2<f64>> {
    match &data.inputs {
        ProbeInputs::Vectors(v) => Ok(v),
        ProbeInputs::Sequences(_) => Err(Error::InvalidConfig(
            "the logistic probe takes one vector per segment".into(),
        )),
    }
}

impl LogisticParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        LogisticParams {
            weights: Array2::zeros((classes, dim)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x).rows().into_iter().map(argmax).collect()
    }

    /// Predictions for the rows of `data` that carry a label for `task`.
    pub fn predict_task(&self, data: &ProbeData, task: Task) -> Result<Vec<usize>> {
        let x = vectors(data)?;
        let (rows, _) = data.task_labels(task);
        Ok(self.predict(x.select(Axis(0), &rows).view()))
    }

    /// Class-weighted cross-entropy `sum_i w_i CE_i / sum_i w_i` and its
    /// gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: &[usize], w: &[f64]) -> (f64, LogisticGrad) {
        let mut probs = self.logits(x);
        let logits = probs.clone();
        softmax_rows(&mut probs);
        let total: f64 = w.iter().sum();
        let mut loss = 0.0;
        for (i, (&c, &wi)) in y.iter().zip(w).enumerate() {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += wi * (lse - row[c]);
            let scale = wi / total;
            let mut p = probs.row_mut(i);
            p[c] -= 1.0;
            p.mapv_inplace(|v| v * scale);
        }
        let grad = LogisticGrad {
            weights: probs.t().dot(&x),
            bias: probs.sum_axis(Axis(0)),
        };
        (loss / total, grad)
    }

    fn step(&mut self, grad: &LogisticGrad, lr: f64) {
        self.weights.scaled_add(-lr, &grad.weights);
        self.bias.scaled_add(-lr, &grad.bias);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Mini-batch gradient descent on class-weighted cross-entropy, stopping
/// once validation weighted F1 has not improved for `patience` epochs. The
/// best validation snapshot is returned.
pub fn train_logistic(
    train: &ProbeData,
    val: &ProbeData,
    task: Task,
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<LogisticFit> {
    config.validate()?;
    let x = vectors(train)?;
    let (rows, y) = train.task_labels(task);
    if rows.is_empty() {
        return Err(Error::EmptyInput("logistic probe training set is empty"));
    }
    if y.iter().all(|c| *c == y[0]) {
        return Err(Error::SingleClass);
    }
    let x = x.select(Axis(0), &rows);
    let table = weight_table(&y, num_classes)?;
    let w: Vec<f64> = y.iter().map(|c| table[*c]).collect();

    let val_x = vectors(val)?;
    let (val_rows, val_y) = val.task_labels(task);
    let val_x = val_x.select(Axis(0), &val_rows);

    let mut params = LogisticParams::zeros(x.ncols(), num_classes);
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = rng_from(config.seed);
    let batch = if config.batch_size == 0 { y.len() } else { config.batch_size };

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let bx = x.select(Axis(0), chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let bw: Vec<f64> = chunk.iter().map(|&i| w[i]).collect();
            let (loss, grad) = params.loss_and_grad(bx.view(), &by, &bw);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "logistic probe loss {loss} at epoch {epoch}"
                )));
            }
            params.step(&grad, config.learning_rate);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite logistic weights at epoch {epoch}")));
        }
        let f1 = if val_y.is_empty() {
            weighted_f1(&y, &params.predict(x.view()))?
        } else {
            weighted_f1(&val_y, &params.predict(val_x.view()))?
        };
        if f1 > best_f1 {
            best_f1 = f1;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(LogisticFit {
        params: best,
        epochs_run,
        best_epoch,
        best_val_f1: best_f1,
    })
}
