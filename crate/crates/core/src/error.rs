use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// What went wrong in a single alignment row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AlignmentIssue {
    Malformed(String),
    Overlap { previous_end: usize, start: usize },
    OutOfRange { end: usize, num_frames: usize },
}

impl std::fmt::Display for AlignmentIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlignmentIssue::Malformed(reason) => write!(f, "malformed row: {reason}"),
            AlignmentIssue::Overlap {
                previous_end,
                start,
            } => write!(
                f,
                "segment starting at frame {start} overlaps previous segment ending at {previous_end}"
            ),
            AlignmentIssue::OutOfRange { end, num_frames } => write!(
                f,
                "segment end {end} is outside the sequence ({num_frames} frames)"
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: bad format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated payload: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("{path}:{line}: {issue}")]
    Alignment {
        path: PathBuf,
        line: usize,
        issue: AlignmentIssue,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("unknown split label {0:?} (expected train, validation or test)")]
    UnknownSplit(String),

    #[error("degenerate segment: no frames to pool")]
    EmptySegment,

    #[error("insufficient data: need at least {needed} items, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown level {level} (quantiser has {levels})")]
    UnknownLevel { level: usize, levels: usize },

    #[error("training set contains a single class; nothing to discriminate")]
    SingleClass,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{name}: {source}")]
    Representation {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Wraps an error with the name of the representation that produced it.
    pub fn in_representation(self, name: impl Into<String>) -> Self {
        Error::Representation {
            name: name.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is numerical divergence.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence(_) => true,
            Error::Representation { source, .. } => source.is_divergence(),
            _ => false,
        }
    }

    /// True when the root cause is a filesystem problem.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::MissingFile(_) => true,
            Error::Representation { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
