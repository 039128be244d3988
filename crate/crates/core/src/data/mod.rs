//! Domain types, file formats, corpus loading and the synthetic generator.

pub mod alignment;
pub mod corpus;
pub mod feature;
pub mod manifest;
pub mod pooling;
pub mod synth;

pub use alignment::{load_alignments, save_alignments, PhoneSegment, NULL_TONE};
pub use corpus::{extract_vowel_segments, Corpus, SegmentView, SplitView, Stage, Utterance};
pub use feature::{load_feature_file, save_feature_file, FeatureSequence};
pub use manifest::{split_dataset, split_dataset_by_label, CorpusManifest, ManifestEntry, Split};
pub use pooling::mean_pool_segment;
pub use synth::{
    generate_in_memory, generate_synthetic_corpus, GenerationSummary, GroundTruth, SplitCounts,
    SyntheticCorpus, SyntheticSpec,
};
