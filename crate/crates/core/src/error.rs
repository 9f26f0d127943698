//! Crate-wide error type.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by graph ingestion, community detection, the model, and the
/// training/evaluation harnesses.
#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem failure while reading or writing `path`.
    #[error("{path}: {source}")]
    Io {
        /// File the operation touched.
        path: PathBuf,
        /// Underlying I/O error.
        #[source]
        source: io::Error,
    },

    /// Malformed input file; the message carries the location.
    #[error("{0}")]
    Parse(String),

    /// An argument or configuration value violates a documented precondition.
    #[error("{0}")]
    InvalidInput(String),

    /// A request that cannot be satisfied by the given data, such as sampling
    /// triplets of a label that the community structure cannot produce.
    #[error("{0}")]
    Infeasible(String),

    /// Tensor or vector shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    /// Wraps an I/O error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
