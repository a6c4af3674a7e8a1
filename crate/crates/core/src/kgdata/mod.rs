//! Triple ingestion, vocabularies, modality features, the filtered
//! evaluation index, and synthetic graph generation.

pub mod features;
pub mod graph;
pub mod synth;

pub use features::{load_features, write_rvec1, ModalityFeatureStore, ModalityFeatures};
pub use graph::{
    build_filter_index, load_triples, make_queries, write_triples, Direction, FilterIndex,
    KnowledgeGraph, Query, Split, Triple, Vocab, VocabMode,
};
pub use synth::{synth_kg, SynthSpec};
