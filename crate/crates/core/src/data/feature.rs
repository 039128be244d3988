use std::path::Path;

use ndarray::Array2;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DSUF";

/// Frame rate assumed for files that do not record one (20 ms hop).
pub const DEFAULT_FRAME_RATE_HZ: f32 = 50.0;

/// Continuous frame-level latents for one utterance, `T x D`.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub frames: Array2<f32>,
    pub frame_rate_hz: f32,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, frames: Array2<f32>) -> Result<Self> {
        let seq = FeatureSequence {
            utterance_id: utterance_id.into(),
            frames,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Checks `T >= 1`, `D >= 1` and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        let (t, d) = self.frames.dim();
        if t == 0 || d == 0 {
            return Err(Error::InvalidShape(format!(
                "feature sequence {:?} has shape {t}x{d}",
                self.utterance_id
            )));
        }
        check_finite(&self.frames)
    }

    /// Bitwise equality of ids and frame values.
    pub fn bit_eq(&self, other: &FeatureSequence) -> bool {
        self.utterance_id == other.utterance_id
            && self.frames.dim() == other.frames.dim()
            && self
                .frames
                .iter()
                .zip(other.frames.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn check_finite(m: &Array2<f32>) -> Result<()> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Reads a DSUF file. The utterance id is taken from the file stem.
pub fn load_feature_file(path: &Path) -> Result<FeatureSequence> {
    let mut r = Reader::open(path, MAGIC)?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    if t == 0 || d == 0 {
        return Err(r.format(format!("header declares empty shape {t}x{d}")));
    }
    let n = t
        .checked_mul(d)
        .ok_or_else(|| r.format("shape overflows"))?;
    r.require(n * 4)?;
    let values = r.f32s(n)?;
    r.finish()?;
    let frames = Array2::from_shape_vec((t, d), values)
        .map_err(|e| Error::InvalidShape(e.to_string()))?;
    check_finite(&frames)?;
    let utterance_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureSequence {
        utterance_id,
        frames,
        frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
    })
}

/// Writes `seq` as DSUF after re-checking its invariants.
pub fn save_feature_file(seq: &FeatureSequence, path: &Path) -> Result<()> {
    seq.validate()?;
    let (t, d) = seq.frames.dim();
    let mut w = Writer::new(MAGIC);
    w.u32(u32::try_from(t).map_err(|_| Error::InvalidShape("too many frames".into()))?);
    w.u32(u32::try_from(d).map_err(|_| Error::InvalidShape("dimension too large".into()))?);
    w.f32s(seq.frames.iter());
    w.finish(path)
}

/// Reads `(T, D)` from a DSUF header without loading the payload.
pub fn peek_feature_shape(path: &Path) -> Result<(usize, usize)> {
    let (t, d) = binio::peek_header(path, MAGIC)?;
    Ok((t as usize, d as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("utt.dsuf");
        let seq = FeatureSequence::new("utt", array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        save_feature_file(&seq, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DSUF");
        assert_eq!(bytes.len(), 16 + 6 * 4);
        let back = load_feature_file(&path).unwrap();
        assert!(seq.bit_eq(&back));
        assert_eq!(back.frames, array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let mut bytes = b"DSUF".to_vec();
        for v in [2u32, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_feature_file(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn short_payload_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let mut bytes = b"DSUF".to_vec();
        for v in [1u32, 10, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..10 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        match load_feature_file(&path) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 16 + 80);
                assert_eq!(found, 16 + 40);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let mut bytes = b"DSUF".to_vec();
        for v in [1u32, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_feature_file(&path),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn missing_file() {
        let err = load_feature_file(Path::new("/definitely/not/here.dsuf")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn save_rejects_nan_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let nan = FeatureSequence {
            utterance_id: "x".into(),
            frames: array![[1.0, f32::NAN]],
            frame_rate_hz: 50.0,
        };
        assert!(matches!(
            save_feature_file(&nan, &path),
            Err(Error::NonFinite { .. })
        ));
        assert!(!path.exists());
        let empty = FeatureSequence {
            utterance_id: "x".into(),
            frames: Array2::zeros((0, 4)),
            frame_rate_hz: 50.0,
        };
        assert!(matches!(
            save_feature_file(&empty, &path),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn peek_reads_shape_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dsuf");
        let seq = FeatureSequence::new("x", Array2::ones((7, 3))).unwrap();
        save_feature_file(&seq, &path).unwrap();
        assert_eq!(peek_feature_shape(&path).unwrap(), (7, 3));
    }
}
