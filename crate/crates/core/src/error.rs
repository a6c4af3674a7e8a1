//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RaddError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed triple line, expected 3 tab-separated fields")]
    MalformedTriple { path: PathBuf, line: usize },

    #[error("{path}:{line}: unknown {kind} label '{label}'")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        label: String,
    },

    #[error("triple file {path} is empty")]
    EmptyTripleFile { path: PathBuf },

    #[error("feature file {path}: {reason}")]
    FeatureFile { path: PathBuf, reason: String },

    #[error("feature file {path}: non-finite value for entity {entity}")]
    NonFiniteFeature { path: PathBuf, entity: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("infeasible synthetic KG: {0}")]
    InfeasibleSynth(String),

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, RaddError>;

impl RaddError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RaddError::Io {
            path: path.into(),
            source,
        }
    }
}
