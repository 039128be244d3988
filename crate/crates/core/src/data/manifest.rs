use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::feature::peek_feature_shape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    features: String,
    alignments: String,
    split: String,
}

/// One utterance in a manifest. Paths are stored as written, relative to the
/// manifest directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub feature_path: PathBuf,
    pub alignment_path: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    /// Directory the relative entry paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub feature_dim: usize,
}

impl CorpusManifest {
    /// Reads and validates a manifest: unique ids, existing files, one
    /// feature dimension across the corpus.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records: Vec<ManifestRecord> = serde_json::from_str(&text)?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let entries = records
            .into_iter()
            .map(|r| {
                Ok(ManifestEntry {
                    split: r.split.parse()?,
                    utterance_id: r.id,
                    feature_path: PathBuf::from(r.features),
                    alignment_path: PathBuf::from(r.alignments),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut manifest = CorpusManifest {
            root,
            entries,
            feature_dim: 0,
        };
        manifest.feature_dim = manifest.check_files()?;
        Ok(manifest)
    }

    fn check_files(&self) -> Result<usize> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        let mut dim = None;
        for e in &self.entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate utterance id {:?}",
                    e.utterance_id
                )));
            }
            let alignments = self.resolve(&e.alignment_path);
            if !alignments.is_file() {
                return Err(Error::MissingFile(alignments));
            }
            let (_, d) = peek_feature_shape(&self.resolve(&e.feature_path))?;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::Manifest(format!(
                        "utterance {:?} has feature dim {d}, corpus uses {expected}",
                        e.utterance_id
                    )))
                }
                _ => {}
            }
        }
        Ok(dim.unwrap_or(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let records: Vec<ManifestRecord> = self
            .entries
            .iter()
            .map(|e| ManifestRecord {
                id: e.utterance_id.clone(),
                features: path_string(&e.feature_path),
                alignments: path_string(&e.alignment_path),
                split: e.split.as_str().to_string(),
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&records)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Probe training needs train, validation and test utterances.
    pub fn require_all_splits(&self) -> Result<()> {
        for split in Split::ALL {
            if self.count(split) == 0 {
                return Err(Error::Manifest(format!("no {split} utterances in corpus")));
            }
        }
        Ok(())
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

/// Keeps only the entries of one split, preserving manifest order.
pub fn split_dataset(corpus: &CorpusManifest, split: Split) -> CorpusManifest {
    CorpusManifest {
        root: corpus.root.clone(),
        entries: corpus
            .entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect(),
        feature_dim: corpus.feature_dim,
    }
}

/// [`split_dataset`] keyed by a split label string.
pub fn split_dataset_by_label(corpus: &CorpusManifest, label: &str) -> Result<CorpusManifest> {
    Ok(split_dataset(corpus, label.parse()?))
}
