//! Quantise continuous speech latents into discrete units and measure how
//! much phone identity and lexical tone survive.
//!
//! The crate covers four quantiser families (frame K-means, mean-pooled and
//! segmentation-variant K-means, residual K-means, and a small neural VQ/RVQ
//! codec), the probing classifiers used to read phone and tone back out of
//! the quantised vectors, and an experiment driver that produces comparison,
//! codebook-sweep and per-level residual tables.

mod binio;

pub mod codec;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kmeans;
pub mod probe;
pub mod quantise;
pub mod rng;

pub use kmeans::{Codebook, FitStats, KMeansConfig};
pub use quantise::{Granularity, QuantisedSequence, Quantiser, QuantiserKind};

pub use data::{
    CorpusManifest, Corpus, FeatureSequence, PhoneSegment, Split, SyntheticSpec, Utterance,
};
pub use error::{Error, Result};

