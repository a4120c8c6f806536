//! Resource persistence behind a pluggable interface.
//!
//! [`ResourceStore`] is what the rest of the toolkit talks to; [`FsStore`] is
//! the filesystem implementation (append-only line-delimited JSON per
//! resource kind plus a rebuildable sidecar index).

mod fs;
mod query;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::fhir::{PatientRecord, ResourceEnvelope};

pub use fs::FsStore;
pub use query::StoreQuery;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store index at {path} is unreadable: {message}")]
    CorruptIndex { path: PathBuf, message: String },
    #[error("stored resource at {location} no longer parses: {message}")]
    CorruptData { location: String, message: String },
    #[error("invalid query: dateFrom is after dateTo")]
    InvalidQuery,
    #[error("no store at {0}")]
    NotFound(PathBuf),
}

impl StoreError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// `path:line` for line-delimited files, `path` or `path#entry[i]` otherwise.
    pub location: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// Documents whose content hash was already stored.
    pub duplicates: usize,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn merge(&mut self, other: IngestReport) {
        self.accepted += other.accepted;
        self.duplicates += other.duplicates;
        self.rejected.extend(other.rejected);
    }
}

pub trait ResourceStore: Send + Sync {
    /// Loads a file or directory of resources. Per-document failures are
    /// reported, never raised.
    fn ingest(&self, source: &Path) -> Result<IngestReport, StoreError>;

    /// Matching envelopes ordered by (subject, timestamp, resource id).
    fn query(&self, q: &StoreQuery) -> Result<Vec<ResourceEnvelope>, StoreError>;

    /// One record per subject seen in any resource, sorted by subject id.
    fn list_users(&self) -> Result<Vec<PatientRecord>, StoreError>;
}
