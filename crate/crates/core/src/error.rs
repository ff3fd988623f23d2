use std::io;

use thiserror::Error;

use crate::id::Identifier;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lookup failed: node {origin} has an empty routing table")]
    LookupFailed { origin: usize },

    #[error("storage full: need {needed} bytes, {remaining} remaining")]
    StorageFull { needed: u64, remaining: u64 },

    #[error("two-hop return probability undefined for isolated vertex {0}")]
    UndefinedThp(usize),

    #[error("no data node in cluster has {0} bytes of free space")]
    NoCapacity(u64),

    #[error("report from {node} does not belong to cluster {cluster}")]
    ClusterMismatch {
        node: Identifier,
        cluster: Identifier,
    },

    #[error("map entry for {data} points at {actual}, which does not hold the data")]
    DanglingMap {
        data: Identifier,
        actual: Identifier,
    },

    #[error("no entry for {0}")]
    NotFound(Identifier),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("all captures were idle, nothing to summarize")]
    EmptyData,

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidInput(_))
    }
}
