use thiserror::Error;

use crate::graph::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad caller input: unknown ids, out-of-range states, scope mismatches.
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid graph: {0}")]
    Validation(ValidationReport),

    /// A state space exceeded the configured enumeration or table cap.
    #[error("capacity exceeded: {what} needs {needed} states, cap is {cap}")]
    Capacity { what: String, needed: u128, cap: u64 },

    /// Every entry of a message or distribution vanished.
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("sampler cannot mix: {0}")]
    Ergodicity(String),

    #[error("region {region}: {source}")]
    Region {
        region: String,
        #[source]
        source: Box<Error>,
    },

    #[error("code construction error: {0}")]
    Code(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn in_region(self, region: &str) -> Self {
        Error::Region {
            region: region.to_string(),
            source: Box::new(self),
        }
    }
}
