//! Run persistence, configuration parsing and artifact export.

mod config;
mod record;
mod runs;

use thiserror::Error;

use crate::genmodel::GenError;
use crate::qd::{FeatureRegion, QdError};
use crate::validate::{summarize, Violation};

pub use config::{parse_config, EvaluatorKind, FullConfig};
pub use record::{new_run_id, now_ms, Lineage, RunRecord, RunStatus};
pub use runs::{
    sha256_hex, Manifest, RunHandle, Store, MANIFEST, RUN_JSON, SAMPLES_CSV_HEADER,
    STATS_CSV_HEADER, TRACES_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run or artifact not found: {0}")]
    NotFound(String),
    #[error("run id {0} already exists")]
    ConflictingRunId(String),
    #[error("corrupt artifact {run_id}/{path}: {reason}")]
    CorruptArtifact {
        run_id: String,
        path: String,
        reason: String,
    },
    #[error("storage is full")]
    StorageFull,
    #[error("invalid configuration: {}", summarize(.0))]
    Validation(Vec<Violation>),
    #[error("status cannot move from {from:?} to {to:?}")]
    InvalidTransition { from: RunStatus, to: RunStatus },
    #[error("zoom region {0:?} is not inside the parent's feature square")]
    RegionOutsideParent(FeatureRegion),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Qd(#[from] QdError),
    #[error(transparent)]
    Gen(#[from] GenError),
}
