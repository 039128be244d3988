//! Synthetic two-factor latents.
//!
//! Each vowel frame is `phone_mean + speaker_offset + tone_path(i / L) + noise`.
//! Phone means are isotropic Gaussian vectors with per-coordinate scale
//! `phone_spread`. Tone lives in a fixed orthonormal subspace of
//! `tone_subspace_dim` columns: every tone interpolates linearly between two of
//! three pitch targets (high, mid, low) over normalised segment time, scaled by
//! `tone_scale`. Speaker offsets are constant per utterance and live in their
//! own low-dimensional subspace. Consonants carry no tone; silence frames at
//! utterance edges are left unaligned.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::alignment::{save_alignments, PhoneSegment, NULL_TONE};
use crate::data::corpus::{Corpus, Utterance};
use crate::data::feature::{save_feature_file, FeatureSequence};
use crate::data::manifest::{CorpusManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::rng::{child_rng, rng_from, Rng};

/// Start/end pitch target per tone: 0 = high, 1 = mid, 2 = low.
const TONE_SHAPES: [(usize, usize); 9] = [
    (0, 0),
    (1, 0),
    (2, 2),
    (0, 2),
    (1, 1),
    (2, 1),
    (1, 2),
    (2, 0),
    (0, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Tone-bearing vowel phones.
    pub num_phones: usize,
    pub num_consonants: usize,
    pub num_tones: usize,
    pub dim: usize,
    pub phone_spread: f64,
    pub tone_scale: f64,
    pub noise_scale: f64,
    pub tone_subspace_dim: usize,
    pub speaker_scale: f64,
    pub speaker_dim: usize,
    pub vowel_frames: (usize, usize),
    pub consonant_frames: (usize, usize),
    pub silence_frames: (usize, usize),
    pub syllables_per_utterance: (usize, usize),
    pub utterances: SplitCounts,
    pub frame_rate_hz: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_phones: 50,
            num_consonants: 20,
            num_tones: 4,
            dim: 64,
            phone_spread: 1.0,
            tone_scale: 0.15,
            noise_scale: 0.05,
            tone_subspace_dim: 8,
            speaker_scale: 0.4,
            speaker_dim: 2,
            vowel_frames: (4, 8),
            consonant_frames: (2, 4),
            silence_frames: (2, 4),
            syllables_per_utterance: (9, 11),
            utterances: SplitCounts {
                train: 820,
                validation: 105,
                test: 105,
            },
            frame_rate_hz: 50.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_phones == 0 || self.num_tones == 0 || self.dim == 0 {
            return bad("num_phones, num_tones and dim must be >= 1".into());
        }
        if self.num_tones > TONE_SHAPES.len() {
            return bad(format!(
                "at most {} tones are supported, got {}",
                TONE_SHAPES.len(),
                self.num_tones
            ));
        }
        if self.tone_subspace_dim == 0 || self.tone_subspace_dim > self.dim {
            return bad(format!(
                "tone_subspace_dim must be in 1..={}, got {}",
                self.dim, self.tone_subspace_dim
            ));
        }
        if self.speaker_dim > self.dim {
            return bad(format!("speaker_dim {} exceeds dim {}", self.speaker_dim, self.dim));
        }
        for (name, v) in [
            ("phone_spread", self.phone_spread),
            ("tone_scale", self.tone_scale),
            ("noise_scale", self.noise_scale),
            ("speaker_scale", self.speaker_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.phone_spread <= 0.0 {
            return bad("phone_spread must be positive".into());
        }
        if self.tone_scale >= self.phone_spread {
            return bad(format!(
                "tone_scale ({}) must stay below phone_spread ({})",
                self.tone_scale, self.phone_spread
            ));
        }
        for (name, (lo, hi), min) in [
            ("vowel_frames", self.vowel_frames, 1),
            ("consonant_frames", self.consonant_frames, 1),
            ("silence_frames", self.silence_frames, 0),
            ("syllables_per_utterance", self.syllables_per_utterance, 1),
        ] {
            if lo < min || hi < lo {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        for split in Split::ALL {
            if self.utterances.get(split) == 0 {
                return bad(format!("need at least one {split} utterance"));
            }
        }
        Ok(())
    }

    pub fn vowel_label(p: usize) -> String {
        format!("v{p:02}")
    }

    pub fn consonant_label(c: usize) -> String {
        format!("c{c:02}")
    }

    pub fn tone_label(t: usize) -> String {
        format!("T{}", t + 1)
    }
}

/// The latent geometry behind a generated corpus.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Vowel means, then consonant means, then the silence mean.
    pub phone_means: Array2<f64>,
    pub tone_basis: Array2<f64>,
    pub speaker_basis: Array2<f64>,
    pub pitch_targets: Array2<f64>,
}

impl GroundTruth {
    pub fn vowel_mean(&self, p: usize) -> ndarray::ArrayView1<'_, f64> {
        self.phone_means.row(p)
    }

    /// Tone offset (already scaled) at normalised time `tau` for tone `t`.
    pub fn tone_offset(&self, spec: &SyntheticSpec, t: usize, tau: f64) -> Array1<f64> {
        let (a, b) = TONE_SHAPES[t];
        let coef = (&self.pitch_targets.row(a) * (1.0 - tau) + &self.pitch_targets.row(b) * tau)
            * spec.tone_scale;
        self.tone_basis.dot(&coef)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub utterances: usize,
    pub frames: usize,
    pub vowel_segments: usize,
    pub consonant_segments: usize,
    pub phone_counts: BTreeMap<String, usize>,
    pub tone_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub train: SplitSummary,
    pub validation: SplitSummary,
    pub test: SplitSummary,
}

impl GenerationSummary {
    pub fn get(&self, split: Split) -> &SplitSummary {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut SplitSummary {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    pub fn total_vowel_segments(&self) -> usize {
        Split::ALL.iter().map(|s| self.get(*s).vowel_segments).sum()
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Orthonormal columns via modified Gram-Schmidt on Gaussian draws.
fn orthonormal_basis(rng: &mut Rng, dim: usize, cols: usize) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((dim, cols));
    let mut j = 0;
    while j < cols {
        let mut v: Array1<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for k in 0..j {
            let col = basis.column(k);
            let proj = col.dot(&v);
            v.scaled_add(-proj, &col);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        basis.column_mut(j).assign(&(v / norm));
        j += 1;
    }
    basis
}

fn draw_range(rng: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn world(spec: &SyntheticSpec) -> GroundTruth {
    let mut rng = rng_from(spec.seed);
    let phone_means = gaussian_matrix(
        &mut rng,
        spec.num_phones + spec.num_consonants + 1,
        spec.dim,
        spec.phone_spread,
    );
    let tone_basis = orthonormal_basis(&mut rng, spec.dim, spec.tone_subspace_dim);
    let speaker_basis = orthonormal_basis(&mut rng, spec.dim, spec.speaker_dim);
    let pitch_targets = gaussian_matrix(&mut rng, 3, spec.tone_subspace_dim, 1.0);
    GroundTruth {
        phone_means,
        tone_basis,
        speaker_basis,
        pitch_targets,
    }
}

struct SplitGenerator<'a> {
    spec: &'a SyntheticSpec,
    truth: &'a GroundTruth,
    rng: Rng,
}

impl SplitGenerator<'_> {
    fn push_frames(
        &mut self,
        rows: &mut Vec<f32>,
        mean: &Array1<f64>,
        len: usize,
        tone: Option<usize>,
    ) {
        let spec = self.spec;
        for i in 0..len {
            let mut frame = mean.clone();
            if let Some(t) = tone {
                frame += &self.truth.tone_offset(spec, t, i as f64 / len as f64);
            }
            for v in frame.iter_mut() {
                *v += self.rng.sample::<f64, _>(StandardNormal) * spec.noise_scale;
            }
            rows.extend(frame.iter().map(|v| *v as f32));
        }
    }

    fn utterance(&mut self, id: String, split: Split) -> Result<Utterance> {
        let spec = self.spec;
        let truth = self.truth;
        let speaker: Array1<f64> = if spec.speaker_dim > 0 {
            let z: Array1<f64> = (0..spec.speaker_dim)
                .map(|_| self.rng.sample::<f64, _>(StandardNormal) * spec.speaker_scale)
                .collect();
            truth.speaker_basis.dot(&z)
        } else {
            Array1::zeros(spec.dim)
        };
        let silence_mean = &truth.phone_means.row(spec.num_phones + spec.num_consonants) + &speaker;

        let mut rows = Vec::new();
        let mut segments = Vec::new();
        let mut frame = 0;

        let lead = draw_range(&mut self.rng, spec.silence_frames);
        self.push_frames(&mut rows, &silence_mean, lead, None);
        frame += lead;

        let syllables = draw_range(&mut self.rng, spec.syllables_per_utterance);
        for _ in 0..syllables {
            if spec.num_consonants > 0 {
                let c = self.rng.random_range(0..spec.num_consonants);
                let len = draw_range(&mut self.rng, spec.consonant_frames);
                let mean = &truth.phone_means.row(spec.num_phones + c) + &speaker;
                self.push_frames(&mut rows, &mean, len, None);
                segments.push(PhoneSegment {
                    utterance_id: id.clone(),
                    start_frame: frame,
                    end_frame: frame + len,
                    phone: SyntheticSpec::consonant_label(c),
                    tone: NULL_TONE.to_string(),
                    is_vowel: false,
                });
                frame += len;
            }
            let p = self.rng.random_range(0..spec.num_phones);
            let t = self.rng.random_range(0..spec.num_tones);
            let len = draw_range(&mut self.rng, spec.vowel_frames);
            let mean = &truth.phone_means.row(p) + &speaker;
            self.push_frames(&mut rows, &mean, len, Some(t));
            segments.push(PhoneSegment {
                utterance_id: id.clone(),
                start_frame: frame,
                end_frame: frame + len,
                phone: SyntheticSpec::vowel_label(p),
                tone: SyntheticSpec::tone_label(t),
                is_vowel: true,
            });
            frame += len;
        }

        let tail = draw_range(&mut self.rng, spec.silence_frames);
        self.push_frames(&mut rows, &silence_mean, tail, None);
        frame += tail;

        let frames = Array2::from_shape_vec((frame, spec.dim), rows)
            .map_err(|e| Error::InvalidShape(e.to_string()))?;
        let mut features = FeatureSequence::new(id, frames)?;
        features.frame_rate_hz = spec.frame_rate_hz;
        Ok(Utterance {
            split,
            features,
            segments,
        })
    }
}

/// Generates the corpus in memory.
pub fn generate_in_memory(spec: &SyntheticSpec) -> Result<(Corpus, GroundTruth, GenerationSummary)> {
    spec.validate()?;
    let truth = world(spec);
    let mut utterances = Vec::new();
    let mut summary = GenerationSummary::default();
    for split in Split::ALL {
        let mut gen = SplitGenerator {
            spec,
            truth: &truth,
            rng: child_rng(spec.seed, split.index() as u64),
        };
        for i in 0..spec.utterances.get(split) {
            let utt = gen.utterance(format!("{split}_{i:05}"), split)?;
            let s = summary.get_mut(split);
            s.utterances += 1;
            s.frames += utt.features.num_frames();
            for seg in &utt.segments {
                if seg.is_vowel {
                    s.vowel_segments += 1;
                    *s.phone_counts.entry(seg.phone.clone()).or_default() += 1;
                    *s.tone_counts.entry(seg.tone.clone()).or_default() += 1;
                } else {
                    s.consonant_segments += 1;
                }
            }
            utterances.push(utt);
        }
    }
    Ok((Corpus::from_utterances(utterances)?, truth, summary))
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub manifest_path: PathBuf,
    pub summary: GenerationSummary,
}

/// Generates the corpus and writes features, alignments, `manifest.json` and
/// `summary.json` under `out_dir`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, out_dir: &Path) -> Result<SyntheticCorpus> {
    let (corpus, _, summary) = generate_in_memory(spec)?;
    write_corpus(&corpus, out_dir)?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    let manifest_path = out_dir.join("manifest.json");
    let manifest = CorpusManifest::load(&manifest_path)?;
    Ok(SyntheticCorpus {
        manifest,
        manifest_path,
        summary,
    })
}

/// Writes an in-memory corpus in the on-disk layout (`features/`, `alignments/`,
/// `manifest.json`).
pub fn write_corpus(corpus: &Corpus, out_dir: &Path) -> Result<()> {
    for sub in ["features", "alignments"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(corpus.utterances().len());
    for utt in corpus.utterances() {
        let id = utt.id();
        let feature_path = PathBuf::from(format!("features/{id}.dsuf"));
        let alignment_path = PathBuf::from(format!("alignments/{id}.tsv"));
        save_feature_file(&utt.features, &out_dir.join(&feature_path))?;
        save_alignments(&out_dir.join(&alignment_path), &utt.segments)?;
        entries.push(ManifestEntry {
            utterance_id: id.to_string(),
            feature_path,
            alignment_path,
            split: utt.split,
        });
    }
    let manifest = CorpusManifest {
        root: out_dir.to_path_buf(),
        entries,
        feature_dim: corpus.dim(),
    };
    manifest.save(&out_dir.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_phones: 5,
            num_consonants: 3,
            dim: 12,
            tone_subspace_dim: 3,
            utterances: SplitCounts {
                train: 6,
                validation: 2,
                test: 2,
            },
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn validation_rules() {
        let mut s = small();
        s.tone_scale = 2.0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.tone_subspace_dim = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.utterances.test = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.num_tones = 10;
        assert!(s.validate().is_err());
        assert!(small().validate().is_ok());
    }

    #[test]
    fn bases_are_orthonormal() {
        let truth = world(&SyntheticSpec::default());
        let g = truth.tone_basis.t().dot(&truth.tone_basis);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn segments_tile_the_aligned_region() {
        let (corpus, _, summary) = generate_in_memory(&small()).unwrap();
        for utt in corpus.utterances() {
            let segs = &utt.segments;
            assert!(segs.first().unwrap().start_frame >= small().silence_frames.0);
            for w in segs.windows(2) {
                assert_eq!(w[0].end_frame, w[1].start_frame);
            }
            assert!(segs.last().unwrap().end_frame <= utt.features.num_frames());
            for s in segs {
                assert_eq!(s.is_vowel, s.tone != NULL_TONE);
            }
        }
        assert_eq!(summary.train.utterances, 6);
    }

    #[test]
    fn noiseless_single_frame_segments_repeat_exactly() {
        let spec = SyntheticSpec {
            noise_scale: 0.0,
            speaker_scale: 0.0,
            vowel_frames: (1, 1),
            ..small()
        };
        let (corpus, _, _) = generate_in_memory(&spec).unwrap();
        let mut seen: BTreeMap<(String, String), Vec<u32>> = BTreeMap::new();
        for v in crate::data::corpus::extract_vowel_segments(&corpus) {
            let bits: Vec<u32> = v.frames.iter().map(|x| x.to_bits()).collect();
            let key = (v.segment.phone.clone(), v.segment.tone.clone());
            if let Some(prev) = seen.get(&key) {
                assert_eq!(prev, &bits);
            } else {
                seen.insert(key, bits);
            }
        }
        assert!(seen.len() > 1);
    }
}
