//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by ingestion, model fitting, and selection.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell could not be parsed as a finite number. Row and column are
    /// 1-based on-disk coordinates (header rows/columns included).
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A feature column cannot be standardized (zero spread after the log
    /// transform). Carries the feature identifier.
    #[error("degenerate feature {feature}: {msg}")]
    DegenerateFeature { feature: String, msg: String },

    /// An M-step denominator collapsed; the candidate model is rejected.
    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("selection failed: {0}")]
    Selection(String),
}

impl Error {
    /// True for failures of the fit itself (as opposed to bad input); model
    /// selection records these and moves on to the next candidate.
    pub fn is_rejection(&self) -> bool {
        matches!(self, Error::DegenerateCluster(_) | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
