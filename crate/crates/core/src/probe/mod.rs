//! Probing classifiers: a recurrent (LSTM) probe over the frames of a vowel
//! segment and a multinomial logistic probe over one vector per segment,
//! both trained with class-weighted cross-entropy and early stopping on
//! validation weighted F1.
//!
//! Probes read [`ProbeData`], which is built from feature frames or from the
//! probe vectors of quantised sequences. Integer codes never reach a probe.

mod logistic;
mod metrics;
mod recurrent;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{mean_pool_segment, Utterance, NULL_TONE};
use crate::error::{Error, Result};
use crate::quantise::{Granularity, QuantisedSequence};

pub use logistic::{train_logistic, LogisticGrad, LogisticParams};
pub use metrics::{class_weights, f1_report, weighted_f1, ClassScore, F1Report};
pub use recurrent::{train_recurrent, RecurrentProbeParams, RecurrentTraining, SequenceBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Phone,
    Tone,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Phone, Task::Tone];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Phone => "phone",
            Task::Tone => "tone",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Recurrent,
    Logistic,
}

impl ProbeKind {
    /// Frame sequences go to the recurrent probe, single vectors to the
    /// logistic probe.
    pub fn for_granularity(g: Granularity) -> Self {
        match g {
            Granularity::Frame => ProbeKind::Recurrent,
            Granularity::Segment => ProbeKind::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub hidden_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Mini-batch size; 0 means the whole training set.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::recurrent()
    }
}

impl ProbeConfig {
    pub fn recurrent() -> Self {
        ProbeConfig {
            kind: ProbeKind::Recurrent,
            hidden_size: 128,
            dropout: 0.3,
            learning_rate: 0.3,
            batch_size: 64,
            max_epochs: 40,
            patience: 10,
            seed: 0,
        }
    }

    pub fn logistic() -> Self {
        ProbeConfig {
            kind: ProbeKind::Logistic,
            hidden_size: 128,
            dropout: 0.0,
            learning_rate: 0.05,
            batch_size: 64,
            max_epochs: 500,
            patience: 25,
            seed: 0,
        }
    }

    pub fn for_kind(kind: ProbeKind) -> Self {
        match kind {
            ProbeKind::Recurrent => Self::recurrent(),
            ProbeKind::Logistic => Self::logistic(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        Ok(())
    }
}

/// Sorted label inventory mapping label strings to class ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(labels: I) -> Self {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        LabelSet { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Phone and tone inventories of the vowel segments of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub phone: LabelSet,
    pub tone: LabelSet,
}

impl Labels {
    /// Union over the given utterances of vowel phones and non-null tones.
    pub fn from_utterances<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Self {
        let mut phones = Vec::new();
        let mut tones = Vec::new();
        for u in utts {
            for s in u.segments.iter().filter(|s| s.is_vowel) {
                phones.push(s.phone.clone());
                if s.tone != NULL_TONE {
                    tones.push(s.tone.clone());
                }
            }
        }
        Labels {
            phone: LabelSet::new(phones),
            tone: LabelSet::new(tones),
        }
    }

    pub fn for_task(&self, task: Task) -> &LabelSet {
        match task {
            Task::Phone => &self.phone,
            Task::Tone => &self.tone,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeInputs {
    /// One vector per segment.
    Vectors(Array2<f64>),
    /// The frames of each segment.
    Sequences(Vec<Array2<f64>>),
}

impl ProbeInputs {
    pub fn len(&self) -> usize {
        match self {
            ProbeInputs::Vectors(v) => v.nrows(),
            ProbeInputs::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            ProbeInputs::Vectors(v) => v.ncols(),
            ProbeInputs::Sequences(s) => s.first().map_or(0, |x| x.ncols()),
        }
    }
}

/// Probe inputs for the vowel segments of one split, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub inputs: ProbeInputs,
    pub phone: Vec<usize>,
    /// `None` for vowels carrying the null tone.
    pub tone: Vec<Option<usize>>,
}

struct LabelledRow {
    phone: usize,
    tone: Option<usize>,
}

fn label_segment(labels: &Labels, seg: &crate::data::PhoneSegment) -> Result<LabelledRow> {
    let phone = labels
        .phone
        .id(&seg.phone)
        .ok_or_else(|| Error::InvalidConfig(format!("phone {:?} missing from label set", seg.phone)))?;
    let tone = match seg.tone_label() {
        None => None,
        Some(t) => Some(
            labels
                .tone
                .id(t)
                .ok_or_else(|| Error::InvalidConfig(format!("tone {t:?} missing from label set")))?,
        ),
    };
    Ok(LabelledRow { phone, tone })
}

fn to_f64(v: ArrayView2<'_, f32>) -> Array2<f64> {
    v.mapv(f64::from)
}

impl ProbeData {
    pub fn len(&self) -> usize {
        self.phone.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phone.is_empty()
    }

    /// Labels of one task, dropping rows without a label. Returns the row
    /// indices kept alongside.
    pub fn task_labels(&self, task: Task) -> (Vec<usize>, Vec<usize>) {
        match task {
            Task::Phone => ((0..self.len()).collect(), self.phone.clone()),
            Task::Tone => self
                .tone
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.map(|t| (i, t)))
                .unzip(),
        }
    }

    /// Raw feature frames of every vowel segment (continuous baseline).
    pub fn continuous_sequences(utts: &[&Utterance], labels: &Labels) -> Result<Self> {
        let mut seqs = Vec::new();
        let mut rows = Vec::new();
        for u in utts {
            for s in u.segments.iter().filter(|s| s.is_vowel) {
                if s.is_empty() {
                    return Err(Error::EmptySegment);
                }
                seqs.push(to_f64(u.segment_frames(s)));
                rows.push(label_segment(labels, s)?);
            }
        }
        Ok(Self::assemble(ProbeInputs::Sequences(seqs), rows))
    }

    /// Mean-pooled raw features of every vowel segment.
    pub fn continuous_pooled(utts: &[&Utterance], labels: &Labels) -> Result<Self> {
        let mut vectors = Vec::new();
        let mut rows = Vec::new();
        let dim = utts.first().map_or(0, |u| u.features.dim());
        for u in utts {
            for s in u.segments.iter().filter(|s| s.is_vowel) {
                vectors.extend(mean_pool_segment(u.segment_frames(s))?.iter().map(|v| f64::from(*v)));
                rows.push(label_segment(labels, s)?);
            }
        }
        let n = rows.len();
        let vectors = Array2::from_shape_vec((n, dim), vectors)
            .map_err(|e| Error::InvalidShape(e.to_string()))?;
        Ok(Self::assemble(ProbeInputs::Vectors(vectors), rows))
    }

    /// Probe vectors of quantised sequences, truncated to `level` levels
    /// when given. `utts` must be the utterances the sequences came from,
    /// in the same order.
    pub fn from_quantised(
        seqs: &[QuantisedSequence],
        utts: &[&Utterance],
        level: Option<usize>,
        labels: &Labels,
    ) -> Result<Self> {
        if seqs.len() != utts.len() {
            return Err(Error::LengthMismatch {
                left: seqs.len(),
                right: utts.len(),
            });
        }
        let mut rows = Vec::new();
        let mut sequences = Vec::new();
        let mut vectors: Vec<f64> = Vec::new();
        let mut dim = 0;
        let mut granularity = None;
        for (q, u) in seqs.iter().zip(utts) {
            if q.utterance_id != u.id() {
                return Err(Error::InvalidConfig(format!(
                    "quantised sequence {} paired with utterance {}",
                    q.utterance_id,
                    u.id()
                )));
            }
            granularity = Some(q.granularity);
            let probe = match level {
                Some(l) => q.level_probe_vectors(l)?,
                None => q.probe_vectors(),
            };
            dim = probe.ncols();
            match q.granularity {
                Granularity::Frame => {
                    for s in u.segments.iter().filter(|s| s.is_vowel) {
                        if s.is_empty() {
                            return Err(Error::EmptySegment);
                        }
                        sequences.push(to_f64(probe.slice(ndarray::s![s.start_frame..s.end_frame, ..])));
                        rows.push(label_segment(labels, s)?);
                    }
                }
                Granularity::Segment => {
                    for (pos, &i) in q.segment_index.iter().enumerate() {
                        let s = &u.segments[i];
                        if s.is_vowel {
                            vectors.extend(probe.row(pos).iter().map(|v| f64::from(*v)));
                            rows.push(label_segment(labels, s)?);
                        }
                    }
                }
            }
        }
        let inputs = match granularity {
            Some(Granularity::Segment) => ProbeInputs::Vectors(
                Array2::from_shape_vec((rows.len(), dim), vectors)
                    .map_err(|e| Error::InvalidShape(e.to_string()))?,
            ),
            _ => ProbeInputs::Sequences(sequences),
        };
        Ok(Self::assemble(inputs, rows))
    }

    fn assemble(inputs: ProbeInputs, rows: Vec<LabelledRow>) -> Self {
        let (phone, tone) = rows.into_iter().map(|r| (r.phone, r.tone)).unzip();
        ProbeData {
            inputs,
            phone,
            tone,
        }
    }
}

/// Per-sample loss weights for one task's training labels, indexed by class.
pub(crate) fn weight_table(labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let map = class_weights(labels)?;
    let mut table = vec![0.0; num_classes];
    for (c, w) in map {
        table[c] = w;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub task: Task,
    pub representation: String,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    pub num_eval_segments: usize,
}

impl ProbeReport {
    pub fn from_predictions(
        task: Task,
        representation: impl Into<String>,
        y_true: &[usize],
        y_pred: &[usize],
        labels: &LabelSet,
    ) -> Result<Self> {
        let report = f1_report(y_true, y_pred, |c| labels.name(c).to_string())?;
        Ok(ProbeReport {
            task,
            representation: representation.into(),
            weighted_f1: report.weighted_f1,
            per_class: report.per_class.into_iter().map(|(_, s)| s).collect(),
            num_eval_segments: y_true.len(),
        })
    }

    /// Support-weighted mean of the per-class F1 values.
    pub fn recomputed_f1(&self) -> f64 {
        let total: usize = self.per_class.iter().map(|c| c.support).sum();
        let acc: f64 = self.per_class.iter().map(|c| c.support as f64 * c.f1).sum();
        acc / total as f64
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-class rows: label, precision, recall, f1, support.
    pub fn save_per_class_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["representation", "task", "label", "precision", "recall", "f1", "support"])?;
        for c in &self.per_class {
            w.write_record([
                self.representation.as_str(),
                self.task.as_str(),
                c.label.as_str(),
                &format!("{:.6}", c.precision),
                &format!("{:.6}", c.recall),
                &format!("{:.6}", c.f1),
                &c.support.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reports for both tasks of one probed representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub phone: ProbeReport,
    /// Absent when no evaluated segment carries a tone.
    pub tone: Option<ProbeReport>,
    pub epochs: BTreeMap<Task, usize>,
}

/// Trains the configured probe on `train` (early stopping on `val`) and
/// evaluates it on `test` for both tasks.
pub fn run_probe(
    config: &ProbeConfig,
    representation: &str,
    labels: &Labels,
    train: &ProbeData,
    val: &ProbeData,
    test: &ProbeData,
) -> Result<ProbeOutcome> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyInput("probe evaluation set is empty"));
    }
    let mut epochs = BTreeMap::new();
    match config.kind {
        ProbeKind::Logistic => {
            let mut reports = BTreeMap::new();
            for task in Task::ALL {
                let (_, test_y) = test.task_labels(task);
                if test_y.is_empty() || labels.for_task(task).len() < 2 {
                    continue;
                }
                let fit = train_logistic(train, val, task, labels.for_task(task).len(), config)?;
                epochs.insert(task, fit.epochs_run);
                let pred = fit.params.predict_task(test, task)?;
                reports.insert(
                    task,
                    ProbeReport::from_predictions(task, representation, &test_y, &pred, labels.for_task(task))?,
                );
            }
            let phone = reports
                .remove(&Task::Phone)
                .ok_or(Error::SingleClass)?;
            Ok(ProbeOutcome {
                phone,
                tone: reports.remove(&Task::Tone),
                epochs,
            })
        }
        ProbeKind::Recurrent => {
            let fit = train_recurrent(train, val, labels, config)?;
            epochs.insert(Task::Phone, fit.best_epoch[0]);
            epochs.insert(Task::Tone, fit.best_epoch[1]);
            let (_, phone_y) = test.task_labels(Task::Phone);
            let phone_pred = fit.phone.predict(test, Task::Phone)?;
            let phone = ProbeReport::from_predictions(
                Task::Phone,
                representation,
                &phone_y,
                &phone_pred,
                &labels.phone,
            )?;
            let (tone_rows, tone_y) = test.task_labels(Task::Tone);
            let tone = if tone_y.is_empty() || labels.tone.len() < 2 {
                None
            } else {
                let all = fit.tone.predict(test, Task::Tone)?;
                let pred: Vec<usize> = tone_rows.iter().map(|&i| all[i]).collect();
                Some(ProbeReport::from_predictions(
                    Task::Tone,
                    representation,
                    &tone_y,
                    &pred,
                    &labels.tone,
                )?)
            };
            Ok(ProbeOutcome {
                phone,
                tone,
                epochs,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_set_sorted_union() {
        let l = LabelSet::new(["b", "a", "b", "c"]);
        assert_eq!(l.labels(), &["a", "b", "c"]);
        assert_eq!(l.id("b"), Some(1));
        assert_eq!(l.id("z"), None);
        assert_eq!(l.name(2), "c");
    }

    #[test]
    fn report_round_trip() {
        let labels = LabelSet::new(["A", "B"]);
        let r = ProbeReport::from_predictions(Task::Tone, "latent", &[0, 0, 1], &[0, 1, 1], &labels).unwrap();
        assert!((r.weighted_f1 - r.recomputed_f1()).abs() < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        r.save_json(&path).unwrap();
        assert_eq!(ProbeReport::load_json(&path).unwrap(), r);
        let csv_path = dir.path().join("r.csv");
        r.save_per_class_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("latent,tone,A,1.000000,0.500000,0.666667,2"));
    }

    #[test]
    fn config_validation() {
        assert!(ProbeConfig::recurrent().validate().is_ok());
        let mut c = ProbeConfig::logistic();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.0;
        c.hidden_size = 0;
        assert!(c.validate().is_err());
    }
}
