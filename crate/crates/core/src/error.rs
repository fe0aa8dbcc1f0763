use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Variants split into two families: validation failures (bad input,
/// configuration, unsatisfiable structure) and runtime failures (numerical
/// breakdown, I/O). [`Error::is_validation`] tells them apart, which the CLI
/// uses to pick its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {variable} is not adjacent to factor {factor}")]
    Adjacency { variable: usize, factor: usize },

    #[error("all-zero message product at variable {variable}")]
    DegenerateMessage { variable: usize },

    #[error("{what}: {count} configurations exceed the cap of {cap}")]
    Capacity { what: String, count: u128, cap: u128 },

    #[error("non-finite value in messages of factor {factor}")]
    NumericalFailure { factor: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("no message implementation registered for factor {factor} ({reason})")]
    Unregistered { factor: usize, reason: String },

    #[error("SMILES parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("valence violation at atom {atom}: explicit bond order {bonds} exceeds valence {valence}")]
    ValenceViolation { atom: usize, bonds: u32, valence: u32 },

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("unsatisfiable valence at atom {atom}: valence {valence} exceeds capacity {capacity}")]
    UnsatisfiableValence {
        atom: usize,
        valence: u32,
        capacity: u32,
    },

    #[error("unknown element `{0}`")]
    UnknownElement(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::learn::ModelParams>,
    },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("dataset record {line}: {message}")]
    Record { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid input or configuration rather than
    /// a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Adjacency { .. }
                | Error::Capacity { .. }
                | Error::Argument(_)
                | Error::Graph(_)
                | Error::Unregistered { .. }
                | Error::Parse { .. }
                | Error::ValenceViolation { .. }
                | Error::UnsupportedStructure(_)
                | Error::UnsatisfiableValence { .. }
                | Error::UnknownElement(_)
                | Error::Configuration(_)
                | Error::EmptyDataset
                | Error::VersionMismatch { .. }
                | Error::Record { .. }
                | Error::Json(_)
        )
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
