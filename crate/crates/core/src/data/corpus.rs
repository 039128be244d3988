//! In-memory corpus: feature sequences with their alignments and split labels.
//!
//! Fitting code reaches the data through [`Corpus::view`], which refuses to
//! hand test utterances to a fitting stage and counts every access so tests
//! can check that nothing peeked at held-out data.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::alignment::{load_alignments, PhoneSegment};
use crate::data::feature::{load_feature_file, FeatureSequence};
use crate::data::manifest::{CorpusManifest, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Utterance {
    pub split: Split,
    pub features: FeatureSequence,
    pub segments: Vec<PhoneSegment>,
}

impl Utterance {
    pub fn id(&self) -> &str {
        &self.features.utterance_id
    }

    pub fn segment_frames(&self, seg: &PhoneSegment) -> ArrayView2<'_, f32> {
        self.features
            .frames
            .slice(s![seg.start_frame..seg.end_frame, ..])
    }

    /// Index of the vowel segment covering each frame, if any.
    pub fn vowel_coverage(&self) -> Vec<Option<usize>> {
        let mut cover = vec![None; self.features.num_frames()];
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.is_vowel {
                for c in &mut cover[seg.start_frame..seg.end_frame] {
                    *c = Some(i);
                }
            }
        }
        cover
    }
}

/// Why a caller wants a split. Fitting may only see training data; model
/// selection may also see validation data; evaluation may see everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Fit,
    Select,
    Evaluate,
}

impl Stage {
    fn allows(self, split: Split) -> bool {
        match self {
            Stage::Fit => split == Split::Train,
            Stage::Select => split != Split::Test,
            Stage::Evaluate => true,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    dim: usize,
    access: [[AtomicUsize; 3]; 3],
}

/// A vowel segment borrowed from a corpus.
#[derive(Debug, Clone)]
pub struct SegmentView<'a> {
    pub utterance: &'a Utterance,
    pub segment: &'a PhoneSegment,
    pub frames: ArrayView2<'a, f32>,
}

impl Corpus {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let dim = utterances
            .first()
            .map(|u| u.features.dim())
            .ok_or(Error::EmptyInput("corpus has no utterances"))?;
        for u in &utterances {
            if u.features.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: u.features.dim(),
                });
            }
        }
        Ok(Corpus {
            utterances,
            dim,
            access: Default::default(),
        })
    }

    /// Loads every utterance in the manifest. Loading runs in parallel but the
    /// result keeps manifest order.
    pub fn load(manifest: &CorpusManifest) -> Result<Self> {
        let utterances = manifest
            .entries
            .par_iter()
            .map(|e| {
                let mut features = load_feature_file(&manifest.resolve(&e.feature_path))?;
                features.utterance_id = e.utterance_id.clone();
                let segments = load_alignments(&manifest.resolve(&e.alignment_path), &features)?;
                Ok(Utterance {
                    split: e.split,
                    features,
                    segments,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::from_utterances(utterances)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    /// Utterances of one split, gated by `stage`.
    pub fn view(&self, stage: Stage, split: Split) -> Result<SplitView<'_>> {
        if !stage.allows(split) {
            return Err(Error::InvalidConfig(format!(
                "{stage:?} stage may not read the {split} split"
            )));
        }
        self.access[stage.index()][split.index()].fetch_add(1, Ordering::Relaxed);
        Ok(SplitView {
            split,
            utterances: self.utterances.iter().filter(|u| u.split == split).collect(),
        })
    }

    /// How many views of `split` were requested at `stage`.
    pub fn access_count(&self, stage: Stage, split: Split) -> usize {
        self.access[stage.index()][split.index()].load(Ordering::Relaxed)
    }

    pub fn count(&self, split: Split) -> usize {
        self.utterances.iter().filter(|u| u.split == split).count()
    }
}

/// Borrowed subset of a corpus for one split.
#[derive(Debug, Clone)]
pub struct SplitView<'a> {
    pub split: Split,
    pub utterances: Vec<&'a Utterance>,
}

impl<'a> SplitView<'a> {
    pub fn num_frames(&self) -> usize {
        self.utterances.iter().map(|u| u.features.num_frames()).sum()
    }

    /// All frames of the split stacked in utterance order.
    pub fn stacked_frames(&self) -> Array2<f32> {
        let dim = self.utterances.first().map_or(0, |u| u.features.dim());
        let mut out = Array2::zeros((self.num_frames(), dim));
        let mut row = 0;
        for u in &self.utterances {
            let n = u.features.num_frames();
            out.slice_mut(s![row..row + n, ..]).assign(&u.features.frames);
            row += n;
        }
        out
    }

    pub fn vowel_segments(&self) -> Vec<SegmentView<'a>> {
        vowel_segments_of(self.utterances.iter().copied())
    }
}

fn vowel_segments_of<'a>(utts: impl Iterator<Item = &'a Utterance>) -> Vec<SegmentView<'a>> {
    utts.flat_map(|u| {
        u.segments.iter().filter(|s| s.is_vowel).map(move |s| SegmentView {
            utterance: u,
            segment: s,
            frames: u.segment_frames(s),
        })
    })
    .collect()
}

/// Every vowel segment of the corpus, in manifest order then segment order.
pub fn extract_vowel_segments(corpus: &Corpus) -> Vec<SegmentView<'_>> {
    vowel_segments_of(corpus.utterances.iter())
}
