//! Class weights and weighted F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-frequency weights normalised by the number of classes present:
/// `w_c = N / (C * count_c)`. A single class gets weight 1.
pub fn class_weights<L: Ord + Clone>(labels: &[L]) -> Result<BTreeMap<L, f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("class_weights needs at least one label"));
    }
    let mut counts: BTreeMap<L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.clone()).or_default() += 1;
    }
    if counts.len() == 1 {
        log::warn!("class weights requested for a single class; using weight 1");
    }
    let n = labels.len() as f64;
    let c = counts.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(l, count)| (l, n / (c * count as f64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub weighted_f1: f64,
    /// One row per class seen in either labels or predictions, by class id.
    pub per_class: Vec<(usize, ClassScore)>,
}

/// Weighted F1 over class ids. Per-class F1 is `2PR/(P+R)` (0 when both are
/// 0), weighted by true-label support; classes that only occur in
/// predictions carry support 0.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(f1_report(y_true, y_pred, |c| c.to_string())?.weighted_f1)
}

pub fn f1_report(
    y_true: &[usize],
    y_pred: &[usize],
    name: impl Fn(usize) -> String,
) -> Result<F1Report> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("weighted F1 needs at least one item"));
    }
    // class -> (true positives, predicted count, support)
    let mut table: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        table.entry(t).or_default().2 += 1;
        table.entry(p).or_default().1 += 1;
        if t == p {
            table.entry(t).or_default().0 += 1;
        }
    }
    let n = y_true.len() as f64;
    let mut weighted = 0.0;
    let mut per_class = Vec::with_capacity(table.len());
    for (class, (tp, predicted, support)) in table {
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += support as f64 * f1;
        per_class.push((
            class,
            ClassScore {
                label: name(class),
                precision,
                recall,
                f1,
                support,
            },
        ));
    }
    Ok(F1Report {
        weighted_f1: weighted / n,
        per_class,
    })
}
