//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
///
/// The CLI maps [`Error::is_numerical`] to exit code 2 and everything else
/// to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at row {row}, column {col}: {msg}")]
    MalformedInput { row: usize, col: usize, msg: String },

    #[error("row {row} ({node}) has no usable values")]
    UnrecoverableRow { row: usize, node: String },

    #[error("window ending at {end_index} needs {needed} samples of history")]
    InsufficientHistory { end_index: usize, needed: usize },

    #[error("aspect ratio violated{}: N={n} exceeds T={t}", region.as_deref().map(|r| format!(" in region {r}")).unwrap_or_default())]
    AspectRatio {
        n: usize,
        t: usize,
        region: Option<String>,
    },

    #[error("node {node} has zero variance in the window")]
    DegenerateRow { node: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("eigenvalue {value} outside the domain of {function}")]
    Domain { function: String, value: f64 },

    #[error("integral diverges: {0}")]
    Divergence(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("ill-conditioned pilot basis (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("numerical failure in {context}: {msg}")]
    Numerical { context: String, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numerical(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            msg: msg.into(),
        }
    }

    /// Failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::Divergence(_) | Error::IllConditioned { .. }
        )
    }

    /// Module the error originates from, for user-facing messages.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => "io",
            Error::MalformedInput { .. }
            | Error::UnrecoverableRow { .. }
            | Error::InsufficientHistory { .. }
            | Error::AspectRatio { .. } => "ingest",
            Error::DegenerateRow { .. } | Error::Shape(_) => "rmm",
            Error::Domain { .. } | Error::Divergence(_) => "les",
            Error::Invariant(_) => "spectral",
            Error::IllConditioned { .. } => "pca",
            Error::Parameter(_) | Error::Contract(_) | Error::Config(_) | Error::Numerical { .. } => {
                "core"
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
