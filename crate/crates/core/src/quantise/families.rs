use ndarray::{Array2, ArrayView2, Axis};

use crate::data::{mean_pool_segment, PhoneSegment, SplitView, Utterance};
use crate::error::{Error, Result};
use crate::kmeans::{self, Codebook, KMeansConfig};
use crate::rng::derive_seed;

use super::{Granularity, QuantisedSequence, Quantiser};

fn fit_level(data: ArrayView2<'_, f32>, k: usize, seed: u64, level: u32) -> Result<Codebook> {
    let config = KMeansConfig::new(k).with_seed(derive_seed(seed, u64::from(level)));
    Ok(kmeans::fit(data, &config)?.with_level(level))
}

fn uses_segment(seg: &PhoneSegment, all_phones: bool) -> bool {
    all_phones || seg.is_vowel
}

/// Indices of the segments a segment-level quantiser summarises.
fn segment_indices(utt: &Utterance, all_phones: bool) -> Vec<usize> {
    utt.segments
        .iter()
        .enumerate()
        .filter(|(_, s)| uses_segment(s, all_phones))
        .map(|(i, _)| i)
        .collect()
}

fn pool_utterance(utt: &Utterance, indices: &[usize]) -> Result<Array2<f32>> {
    let mut out = Array2::zeros((indices.len(), utt.features.dim()));
    for (row, &i) in indices.iter().enumerate() {
        let pooled = mean_pool_segment(utt.segment_frames(&utt.segments[i]))?;
        out.row_mut(row).assign(&pooled);
    }
    Ok(out)
}

/// Mean-pooled vectors of every vowel segment of a split (every segment when
/// `all_phones`), in utterance then segment order.
pub fn pooled_vowel_segments(view: &SplitView<'_>, all_phones: bool) -> Result<Array2<f32>> {
    let mut parts = Vec::with_capacity(view.utterances.len());
    for u in &view.utterances {
        parts.push(pool_utterance(u, &segment_indices(u, all_phones))?);
    }
    stack_rows(&parts, view.utterances.first().map_or(0, |u| u.features.dim()))
}

fn stack_rows(parts: &[Array2<f32>], dim: usize) -> Result<Array2<f32>> {
    if parts.is_empty() {
        return Ok(Array2::zeros((0, dim)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidShape(e.to_string()))
}

fn check_dim(codebook: &Codebook, utt: &Utterance) -> Result<()> {
    if utt.features.dim() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            found: utt.features.dim(),
        });
    }
    Ok(())
}

fn column(codes: &[u32]) -> Array2<u32> {
    Array2::from_shape_vec((codes.len(), 1), codes.to_vec()).expect("column shape")
}

fn two_columns(a: &[u32], b: &[u32]) -> Array2<u32> {
    Array2::from_shape_fn((a.len(), 2), |(i, j)| if j == 0 { a[i] } else { b[i] })
}

/// Frame-level K-means: every frame becomes its nearest centroid.
#[derive(Debug, Clone)]
pub struct ClassicKMeans {
    pub codebook: Codebook,
}

/// Fits a K-centroid codebook on every frame of the training split.
pub fn fit_classic(train: &SplitView<'_>, k: usize, seed: u64) -> Result<ClassicKMeans> {
    let frames = train.stacked_frames();
    Ok(ClassicKMeans {
        codebook: fit_level(frames.view(), k, seed, 1)?,
    })
}

impl Quantiser for ClassicKMeans {
    fn codebooks(&self) -> Vec<&Codebook> {
        vec![&self.codebook]
    }

    fn name(&self) -> String {
        format!("classic-{}", self.codebook.k())
    }

    fn granularity(&self) -> Granularity {
        Granularity::Frame
    }

    fn level_sizes(&self) -> Vec<usize> {
        vec![self.codebook.k()]
    }

    fn quantise(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        check_dim(&self.codebook, utt)?;
        let assigned = self.codebook.assign_batch(utt.features.frames.view())?;
        let n = assigned.codes.len();
        Ok(QuantisedSequence {
            utterance_id: utt.id().to_string(),
            granularity: Granularity::Frame,
            level_sizes: self.level_sizes(),
            level_vectors: vec![self.codebook.gather(&assigned.codes)],
            codes: column(&assigned.codes),
            covered: vec![true; n],
            segment_index: Vec::new(),
        })
    }
}

/// K-means over mean-pooled vowel segments; one position per vowel.
#[derive(Debug, Clone)]
pub struct MeanPooledKMeans {
    pub codebook: Codebook,
}

pub fn fit_mean_pooled(train: &SplitView<'_>, k: usize, seed: u64) -> Result<MeanPooledKMeans> {
    let pooled = pooled_vowel_segments(train, false)?;
    Ok(MeanPooledKMeans {
        codebook: fit_level(pooled.view(), k, seed, 1)?,
    })
}

impl Quantiser for MeanPooledKMeans {
    fn codebooks(&self) -> Vec<&Codebook> {
        vec![&self.codebook]
    }

    fn name(&self) -> String {
        format!("mean-pooled-{}", self.codebook.k())
    }

    fn granularity(&self) -> Granularity {
        Granularity::Segment
    }

    fn level_sizes(&self) -> Vec<usize> {
        vec![self.codebook.k()]
    }

    fn quantise(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        check_dim(&self.codebook, utt)?;
        let indices = segment_indices(utt, false);
        let pooled = pool_utterance(utt, &indices)?;
        let assigned = self.codebook.assign_batch(pooled.view())?;
        Ok(QuantisedSequence {
            utterance_id: utt.id().to_string(),
            granularity: Granularity::Segment,
            level_sizes: self.level_sizes(),
            level_vectors: vec![self.codebook.gather(&assigned.codes)],
            codes: column(&assigned.codes),
            covered: vec![true; indices.len()],
            segment_index: indices,
        })
    }
}

/// Segmentation-variant codebooks: each frame's centroid is averaged with
/// the centroid of its vowel segment's pooled vector.
#[derive(Debug, Clone)]
pub struct Svc {
    pub frame: Codebook,
    pub segment: Codebook,
}

pub fn fit_svc(train: &SplitView<'_>, k_frame: usize, k_segment: usize, seed: u64) -> Result<Svc> {
    let frames = train.stacked_frames();
    let pooled = pooled_vowel_segments(train, false)?;
    Ok(Svc {
        frame: fit_level(frames.view(), k_frame, seed, 1)?,
        segment: fit_level(pooled.view(), k_segment, seed, 2)?,
    })
}

impl Quantiser for Svc {
    fn codebooks(&self) -> Vec<&Codebook> {
        vec![&self.frame, &self.segment]
    }

    fn name(&self) -> String {
        if self.frame.k() == self.segment.k() {
            format!("svc-{}x2", self.frame.k())
        } else {
            format!("svc-{}+{}", self.frame.k(), self.segment.k())
        }
    }

    fn granularity(&self) -> Granularity {
        Granularity::Frame
    }

    fn level_sizes(&self) -> Vec<usize> {
        vec![self.frame.k(), self.segment.k()]
    }

    /// Level 1 is the frame codebook; level 2 is the segment codebook and is
    /// the reserved code 0 (uncovered) outside vowel segments, where the
    /// frame centroid is used alone.
    fn quantise(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        check_dim(&self.frame, utt)?;
        let frame_codes = self.frame.assign_batch(utt.features.frames.view())?.codes;
        let indices = segment_indices(utt, false);
        let pooled = pool_utterance(utt, &indices)?;
        let seg_codes = self.segment.assign_batch(pooled.view())?.codes;
        let mut code_of_segment = vec![None; utt.segments.len()];
        for (pos, &i) in indices.iter().enumerate() {
            code_of_segment[i] = Some(seg_codes[pos]);
        }

        let frame_vectors = self.frame.gather(&frame_codes);
        let mut fused = frame_vectors.clone();
        let mut level2 = vec![0u32; frame_codes.len()];
        let mut covered = vec![false; frame_codes.len()];
        for (t, cover) in utt.vowel_coverage().into_iter().enumerate() {
            if let Some(code) = cover.and_then(|s| code_of_segment[s]) {
                level2[t] = code;
                covered[t] = true;
                let c_seg = self.segment.centroid(code);
                for (f, s) in fused.row_mut(t).iter_mut().zip(c_seg.iter()) {
                    *f = (*f + *s) / 2.0;
                }
            }
        }
        Ok(QuantisedSequence {
            utterance_id: utt.id().to_string(),
            granularity: Granularity::Frame,
            level_sizes: self.level_sizes(),
            codes: two_columns(&frame_codes, &level2),
            level_vectors: vec![frame_vectors, fused],
            covered,
            segment_index: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualVariant {
    /// Level 2 quantises each frame minus its segment's phone centroid.
    Frame,
    /// Level 2 quantises each pooled segment minus its phone centroid.
    Segmental,
}

/// Two-level residual K-means: a coarse codebook on pooled segments, then a
/// codebook on what the coarse centroid leaves unexplained.
#[derive(Debug, Clone)]
pub struct Residual {
    pub phone: Codebook,
    pub residual: Codebook,
    pub variant: ResidualVariant,
    /// Level 1 covers every phone segment rather than vowels only.
    pub all_phones: bool,
}

/// Fits the phone-level codebook on pooled training segments and the residual
/// codebook on residuals against it.
pub fn fit_residual(
    train: &SplitView<'_>,
    k_phone: usize,
    k_residual: usize,
    variant: ResidualVariant,
    all_phones: bool,
    seed: u64,
) -> Result<Residual> {
    let pooled = pooled_vowel_segments(train, all_phones)?;
    let phone = fit_level(pooled.view(), k_phone, seed, 1)?;
    let residuals = match variant {
        ResidualVariant::Segmental => {
            let codes = phone.assign_batch(pooled.view())?.codes;
            &pooled - &phone.gather(&codes)
        }
        ResidualVariant::Frame => {
            let mut parts = Vec::with_capacity(train.utterances.len());
            for u in &train.utterances {
                let (level1, _, covered) = frame_level_one(&phone, u, all_phones)?;
                let keep: Vec<usize> = (0..covered.len()).filter(|t| covered[*t]).collect();
                let r = &u.features.frames - &level1;
                parts.push(r.select(Axis(0), &keep));
            }
            stack_rows(&parts, phone.dim())?
        }
    };
    let residual = fit_level(residuals.view(), k_residual, seed, 2)?;
    Ok(Residual {
        phone,
        residual,
        variant,
        all_phones,
    })
}

/// Per-frame level-1 centroids (zero outside segments), codes and coverage.
fn frame_level_one(
    phone: &Codebook,
    utt: &Utterance,
    all_phones: bool,
) -> Result<(Array2<f32>, Vec<u32>, Vec<bool>)> {
    let indices = segment_indices(utt, all_phones);
    let pooled = pool_utterance(utt, &indices)?;
    let seg_codes = phone.assign_batch(pooled.view())?.codes;
    let n = utt.features.num_frames();
    let mut vectors = Array2::zeros((n, phone.dim()));
    let mut codes = vec![0u32; n];
    let mut covered = vec![false; n];
    for (pos, &i) in indices.iter().enumerate() {
        let seg = &utt.segments[i];
        for t in seg.start_frame..seg.end_frame {
            codes[t] = seg_codes[pos];
            covered[t] = true;
            vectors.row_mut(t).assign(&phone.centroid(seg_codes[pos]));
        }
    }
    Ok((vectors, codes, covered))
}

impl Quantiser for Residual {
    fn codebooks(&self) -> Vec<&Codebook> {
        vec![&self.phone, &self.residual]
    }

    fn name(&self) -> String {
        let variant = match self.variant {
            ResidualVariant::Frame => "frame",
            ResidualVariant::Segmental => "segmental",
        };
        format!("residual-{variant}-{}+{}", self.phone.k(), self.residual.k())
    }

    fn granularity(&self) -> Granularity {
        match self.variant {
            ResidualVariant::Frame => Granularity::Frame,
            ResidualVariant::Segmental => Granularity::Segment,
        }
    }

    fn level_sizes(&self) -> Vec<usize> {
        vec![self.phone.k(), self.residual.k()]
    }

    fn quantise(&self, utt: &Utterance) -> Result<QuantisedSequence> {
        check_dim(&self.phone, utt)?;
        let (level1, codes1, covered, segment_index, items) = match self.variant {
            ResidualVariant::Segmental => {
                let indices = segment_indices(utt, self.all_phones);
                let pooled = pool_utterance(utt, &indices)?;
                let codes = self.phone.assign_batch(pooled.view())?.codes;
                let level1 = self.phone.gather(&codes);
                let n = codes.len();
                (level1, codes, vec![true; n], indices, pooled)
            }
            ResidualVariant::Frame => {
                let (level1, codes, covered) = frame_level_one(&self.phone, utt, self.all_phones)?;
                (level1, codes, covered, Vec::new(), utt.features.frames.clone())
            }
        };
        let residuals = &items - &level1;
        let codes2 = self.residual.assign_batch(residuals.view())?.codes;
        let level2 = &level1 + &self.residual.gather(&codes2);
        Ok(QuantisedSequence {
            utterance_id: utt.id().to_string(),
            granularity: self.granularity(),
            level_sizes: self.level_sizes(),
            codes: two_columns(&codes1, &codes2),
            level_vectors: vec![level1, level2],
            covered,
            segment_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Corpus, FeatureSequence, Split, Stage};
    use ndarray::array;

    fn seg(start: usize, end: usize, phone: &str, vowel: bool) -> PhoneSegment {
        PhoneSegment {
            utterance_id: "u".into(),
            start_frame: start,
            end_frame: end,
            phone: phone.into(),
            tone: if vowel { "T1".into() } else { "T0".into() },
            is_vowel: vowel,
        }
    }

    fn utterance(frames: Array2<f32>, segments: Vec<PhoneSegment>) -> Utterance {
        Utterance {
            split: Split::Train,
            features: FeatureSequence::new("u", frames).unwrap(),
            segments,
        }
    }

    fn corpus_of(utt: Utterance) -> Corpus {
        Corpus::from_utterances(vec![utt]).unwrap()
    }

    #[test]
    fn svc_midpoint() {
        let svc = Svc {
            frame: Codebook::from_centroids(array![[1.0f32, 0.0]], 1).unwrap(),
            segment: Codebook::from_centroids(array![[3.0f32, 2.0]], 2).unwrap(),
        };
        let utt = utterance(
            array![[0.0f32, 0.0], [1.0, 1.0], [2.0, 2.0]],
            vec![seg(0, 1, "c", false), seg(1, 3, "a", true)],
        );
        let q = svc.quantise(&utt).unwrap();
        assert_eq!(q.probe_vectors().row(1).to_vec(), vec![2.0, 1.0]);
        assert_eq!(q.probe_vectors().row(2).to_vec(), vec![2.0, 1.0]);
        // consonant frame keeps the frame centroid alone
        assert_eq!(q.probe_vectors().row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(q.covered, vec![false, true, true]);
        assert_eq!(q.codes.column(1).to_vec(), vec![0, 0, 0]);
    }

    #[test]
    fn residual_subtraction() {
        // one segment: frames (1,1),(3,3), pooled (2,2)
        let utt = utterance(array![[1.0f32, 1.0], [3.0, 3.0]], vec![seg(0, 2, "a", true)]);
        let corpus = corpus_of(utt);
        let view = corpus.view(Stage::Fit, Split::Train).unwrap();
        let r = fit_residual(&view, 1, 2, ResidualVariant::Frame, false, 0).unwrap();
        assert_eq!(r.phone.centroid(0).to_vec(), vec![2.0, 2.0]);
        let mut res: Vec<Vec<f32>> = r.residual.centroids.rows().into_iter().map(|c| c.to_vec()).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(res, vec![vec![-1.0, -1.0], vec![1.0, 1.0]]);
        let q = r.quantise(&view.utterances[0]).unwrap();
        assert_eq!(q.probe_vectors(), array![[1.0f32, 1.0], [3.0, 3.0]]);
        assert_eq!(q.level_probe_vectors(1).unwrap(), array![[2.0f32, 2.0], [2.0, 2.0]]);
    }

    #[test]
    fn residual_uncovered_frames_use_level_two_only() {
        let r = Residual {
            phone: Codebook::from_centroids(array![[5.0f32]], 1).unwrap(),
            residual: Codebook::from_centroids(array![[0.0f32], [1.0]], 2).unwrap(),
            variant: ResidualVariant::Frame,
            all_phones: false,
        };
        let utt = utterance(array![[1.0f32], [5.0]], vec![seg(0, 1, "c", false), seg(1, 2, "a", true)]);
        let q = r.quantise(&utt).unwrap();
        assert_eq!(q.covered, vec![false, true]);
        assert_eq!(q.level_probe_vectors(1).unwrap(), array![[0.0f32], [5.0]]);
        assert_eq!(q.probe_vectors(), array![[1.0f32], [5.0]]);
    }

    #[test]
    fn mean_pooled_single_frame_segments_match_frame_fit() {
        let frames = array![[0.0f32, 0.0], [1.0, 0.5], [4.0, 4.0], [5.0, 4.5], [9.0, 0.0]];
        let segs = (0..5).map(|i| seg(i, i + 1, "a", true)).collect();
        let corpus = corpus_of(utterance(frames.clone(), segs));
        let view = corpus.view(Stage::Fit, Split::Train).unwrap();
        let pooled = fit_mean_pooled(&view, 3, 9).unwrap();
        let classic = fit_classic(&view, 3, 9).unwrap();
        assert!(pooled.codebook.bit_eq(&classic.codebook));
        let q = pooled.quantise(&view.utterances[0]).unwrap();
        assert_eq!(q.segment_index, vec![0, 1, 2, 3, 4]);
        assert_eq!(q.granularity, Granularity::Segment);
    }

    #[test]
    fn classic_k1_maps_to_mean() {
        let frames = array![[0.0f32], [2.0], [4.0], [6.0]];
        let corpus = corpus_of(utterance(frames, vec![seg(0, 4, "a", true)]));
        let view = corpus.view(Stage::Fit, Split::Train).unwrap();
        let c = fit_classic(&view, 1, 0).unwrap();
        let q = c.quantise(&view.utterances[0]).unwrap();
        assert!(q.probe_vectors().iter().all(|v| *v == 3.0));
        assert_eq!(c.name(), "classic-1");
        assert_eq!(c.budget(), 1);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let c = ClassicKMeans {
            codebook: Codebook::from_centroids(array![[0.0f32, 1.0, 2.0]], 1).unwrap(),
        };
        let utt = utterance(array![[0.0f32, 1.0]], vec![]);
        assert!(matches!(c.quantise(&utt), Err(Error::DimensionMismatch { expected: 3, found: 2 })));
    }
}
