//! The K-means quantiser families behind one interface.
//!
//! Every quantiser maps an [`Utterance`] to a [`QuantisedSequence`]: integer
//! codes per position and level, plus the vectors a probe reads. Probes never
//! see the integer codes.

mod families;

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SplitView, Utterance};
use crate::error::{Error, Result};
use crate::kmeans::Codebook;

pub use families::{
    fit_classic, fit_mean_pooled, fit_residual, fit_svc, pooled_vowel_segments, ClassicKMeans,
    MeanPooledKMeans, Residual, ResidualVariant, Svc,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Frame,
    Segment,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Frame => "frame",
            Granularity::Segment => "segment",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Codes and probe vectors for one utterance.
///
/// Frame granularity has one position per frame. Segment granularity has one
/// position per vowel segment, and `segment_index[i]` names the segment of the
/// utterance that position `i` summarises.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantisedSequence {
    pub utterance_id: String,
    pub granularity: Granularity,
    pub level_sizes: Vec<usize>,
    /// positions x levels.
    pub codes: Array2<u32>,
    /// `level_vectors[l]` is the vector implied by levels `0..=l`; the last
    /// entry is the probe vector.
    pub level_vectors: Vec<Array2<f32>>,
    /// False where the first-level code is the reserved "no segment" code 0
    /// (frames outside every segment in SVC and residual-frame quantisers).
    pub covered: Vec<bool>,
    pub segment_index: Vec<usize>,
}

impl QuantisedSequence {
    pub fn num_positions(&self) -> usize {
        self.codes.nrows()
    }

    pub fn num_levels(&self) -> usize {
        self.level_sizes.len()
    }

    /// The vectors a probe reads.
    pub fn probe_vectors(&self) -> ArrayView2<'_, f32> {
        self.level_vectors
            .last()
            .expect("at least one level")
            .view()
    }

    /// Probe vectors truncated to the first `level` levels (1-based).
    pub fn level_probe_vectors(&self, level: usize) -> Result<ArrayView2<'_, f32>> {
        if level == 0 || level > self.level_vectors.len() {
            return Err(Error::UnknownLevel {
                level,
                levels: self.level_vectors.len(),
            });
        }
        Ok(self.level_vectors[level - 1].view())
    }

    /// Code tuple at one position.
    pub fn code_tuple(&self, position: usize) -> Vec<u32> {
        self.codes.row(position).to_vec()
    }
}

/// Truncated probe vectors of a quantised sequence; see
/// [`QuantisedSequence::level_probe_vectors`].
pub fn level_probe_vectors(q: &QuantisedSequence, level: usize) -> Result<ArrayView2<'_, f32>> {
    q.level_probe_vectors(level)
}

/// A fitted quantiser.
pub trait Quantiser: Send + Sync {
    fn name(&self) -> String;
    fn granularity(&self) -> Granularity;
    fn level_sizes(&self) -> Vec<usize>;
    fn quantise(&self, utterance: &Utterance) -> Result<QuantisedSequence>;

    /// Total code budget, the sum of level sizes.
    fn budget(&self) -> usize {
        self.level_sizes().iter().sum()
    }

    /// Per-level K-means codebooks, empty for quantisers without them.
    fn codebooks(&self) -> Vec<&Codebook> {
        Vec::new()
    }
}

/// Quantises every utterance of a split in parallel, keeping split order.
pub fn quantise_split(q: &dyn Quantiser, view: &SplitView<'_>) -> Result<Vec<QuantisedSequence>> {
    view.utterances
        .par_iter()
        .map(|u| q.quantise(u))
        .collect()
}

/// A quantiser family with its code budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantiserKind {
    ClassicKMeans { k: usize },
    MeanPooledKMeans { k: usize },
    Svc { k_frame: usize, k_segment: usize },
    ResidualFrame { k_phone: usize, k_residual: usize },
    ResidualSegmental { k_phone: usize, k_residual: usize },
}

impl QuantiserKind {
    pub fn level_sizes(&self) -> Vec<usize> {
        match *self {
            QuantiserKind::ClassicKMeans { k } | QuantiserKind::MeanPooledKMeans { k } => vec![k],
            QuantiserKind::Svc { k_frame, k_segment } => vec![k_frame, k_segment],
            QuantiserKind::ResidualFrame {
                k_phone,
                k_residual,
            }
            | QuantiserKind::ResidualSegmental {
                k_phone,
                k_residual,
            } => vec![k_phone, k_residual],
        }
    }

    pub fn budget(&self) -> usize {
        self.level_sizes().iter().sum()
    }

    pub fn granularity(&self) -> Granularity {
        match self {
            QuantiserKind::MeanPooledKMeans { .. } | QuantiserKind::ResidualSegmental { .. } => {
                Granularity::Segment
            }
            _ => Granularity::Frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_sizes().contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "{self:?}: every level needs at least one code"
            )));
        }
        Ok(())
    }

    /// Fits on the training split. `seed` feeds every level's K-means.
    pub fn fit(&self, train: &SplitView<'_>, seed: u64) -> Result<Box<dyn Quantiser>> {
        self.validate()?;
        Ok(match *self {
            QuantiserKind::ClassicKMeans { k } => Box::new(fit_classic(train, k, seed)?),
            QuantiserKind::MeanPooledKMeans { k } => Box::new(fit_mean_pooled(train, k, seed)?),
            QuantiserKind::Svc { k_frame, k_segment } => {
                Box::new(fit_svc(train, k_frame, k_segment, seed)?)
            }
            QuantiserKind::ResidualFrame {
                k_phone,
                k_residual,
            } => Box::new(fit_residual(
                train,
                k_phone,
                k_residual,
                ResidualVariant::Frame,
                false,
                seed,
            )?),
            QuantiserKind::ResidualSegmental {
                k_phone,
                k_residual,
            } => Box::new(fit_residual(
                train,
                k_phone,
                k_residual,
                ResidualVariant::Segmental,
                false,
                seed,
            )?),
        })
    }
}

impl QuantiserKind {
    /// Rebuilds a fitted quantiser from its per-level codebooks, in level
    /// order, checking they match this kind's level sizes.
    pub fn from_codebooks(&self, codebooks: Vec<Codebook>) -> Result<Box<dyn Quantiser>> {
        let sizes = self.level_sizes();
        let found: Vec<usize> = codebooks.iter().map(Codebook::k).collect();
        if found != sizes {
            return Err(Error::InvalidConfig(format!(
                "{self:?} expects codebooks of sizes {sizes:?}, found {found:?}"
            )));
        }
        if let Some(c) = codebooks.iter().find(|c| c.dim() != codebooks[0].dim()) {
            return Err(Error::DimensionMismatch {
                expected: codebooks[0].dim(),
                found: c.dim(),
            });
        }
        let mut it = codebooks.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(match *self {
            QuantiserKind::ClassicKMeans { .. } => Box::new(ClassicKMeans { codebook: next() }),
            QuantiserKind::MeanPooledKMeans { .. } => Box::new(MeanPooledKMeans { codebook: next() }),
            QuantiserKind::Svc { .. } => Box::new(Svc {
                frame: next(),
                segment: next(),
            }),
            QuantiserKind::ResidualFrame { .. } | QuantiserKind::ResidualSegmental { .. } => {
                let variant = if matches!(self, QuantiserKind::ResidualFrame { .. }) {
                    ResidualVariant::Frame
                } else {
                    ResidualVariant::Segmental
                };
                Box::new(Residual {
                    phone: next(),
                    residual: next(),
                    variant,
                    all_phones: false,
                })
            }
        })
    }
}

pub const UNITS_HEADER: &str = "utterance_id\tposition\tgranularity\tlevel\tcode";

/// Writes codes in long format: one row per position and level (1-based).
pub fn write_units_tsv(path: &Path, sequences: &[QuantisedSequence]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{UNITS_HEADER}")?;
        for q in sequences {
            for (pos, row) in q.codes.rows().into_iter().enumerate() {
                for (level, code) in row.iter().enumerate() {
                    writeln!(
                        w,
                        "{}\t{}\t{}\t{}\t{}",
                        q.utterance_id,
                        pos,
                        q.granularity,
                        level + 1,
                        code
                    )?;
                }
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> QuantisedSequence {
        QuantisedSequence {
            utterance_id: "u1".into(),
            granularity: Granularity::Segment,
            level_sizes: vec![2, 3],
            codes: array![[1u32, 2], [0, 0]],
            level_vectors: vec![array![[1.0f32], [0.0]], array![[1.5f32], [0.5]]],
            covered: vec![true, true],
            segment_index: vec![1, 3],
        }
    }

    #[test]
    fn level_lookup() {
        let q = sample();
        assert_eq!(q.level_probe_vectors(1).unwrap(), array![[1.0f32], [0.0]]);
        assert_eq!(q.probe_vectors(), q.level_probe_vectors(2).unwrap());
        assert!(matches!(
            q.level_probe_vectors(3),
            Err(Error::UnknownLevel { level: 3, levels: 2 })
        ));
        assert!(level_probe_vectors(&q, 0).is_err());
    }

    #[test]
    fn units_tsv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("units.tsv");
        write_units_tsv(&path, &[sample()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], UNITS_HEADER);
        assert_eq!(lines[1], "u1\t0\tsegment\t1\t1");
        assert_eq!(lines[2], "u1\t0\tsegment\t2\t2");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn kind_budgets() {
        let r = QuantiserKind::ResidualSegmental {
            k_phone: 50,
            k_residual: 450,
        };
        assert_eq!(r.budget(), 500);
        assert_eq!(
            QuantiserKind::Svc {
                k_frame: 250,
                k_segment: 250
            }
            .budget(),
            500
        );
        assert!(QuantiserKind::ClassicKMeans { k: 0 }.validate().is_err());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<QuantiserKind>(&json).unwrap(), r);
    }
}
