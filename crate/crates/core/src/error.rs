use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsprError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported schema_version {found} in {context} (expected {expected})")]
    SchemaVersion { context: String, found: u64, expected: u64 },

    /// A loaded or constructed value breaks one of its documented invariants.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{0}` is not reachable on the known map")]
    Unreachable(String),

    #[error("cannot arrive at `{0}`: it is not a navigable node of the map")]
    NotNavigable(String),

    #[error("episode `{episode}` is inconsistent with scene `{scene}`: {reason}")]
    EpisodeMismatch {
        episode: String,
        scene: String,
        reason: String,
    },

    #[error("empty input: {0}")]
    Empty(String),
}

impl HsprError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HsprError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, source: serde_json::Error) -> Self {
        HsprError::Parse {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input files or flags rather than a bug.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, HsprError::Unreachable(_) | HsprError::NotNavigable(_))
    }
}

pub type Result<T> = std::result::Result<T, HsprError>;
