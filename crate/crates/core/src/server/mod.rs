//! HTTP JSON API and the operations behind it.

mod http;
mod service;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genmodel::GenError;
use crate::qd::QdError;
use crate::surrogate::SurrogateError;
use crate::validate::{summarize, Violation};

pub use http::{router, serve, AppState, DATA_DIR_ENV, IDEMPOTENCY_HEADER};
pub use service::{
    ArchiveView, CellView, FeatureTriple, RunStatusView, VaeSummary, VaeTrainRequest,
    ValidateInput, ValidationReport, WalkCell, WalkRequest, WalkView, Workbench, ZoomRequest,
    PROGRESS_JSON,
};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("invalid request: {}", summarize(.0))]
    Validation(Vec<Violation>),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("the selected region contains no parent elites and fill is disabled")]
    EmptyRegion,
    #[error("internal error: {0}")]
    Internal(String),
}

/// Error payload: `{code, message, fields}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub fields: Vec<Violation>,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Validation(_) => "validation_error",
            ApiError::NotFound(_) => "not_found",
            ApiError::NotReady(_) => "not_ready",
            ApiError::Conflict(_) => "conflict",
            ApiError::EmptyRegion => "empty_region",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            fields: match self {
                ApiError::Validation(v) => v.clone(),
                _ => Vec::new(),
            },
        }
    }
}

impl From<QdError> for ApiError {
    fn from(e: QdError) -> Self {
        match e {
            QdError::InvalidConfig(v) => ApiError::Validation(v),
            QdError::InvalidRegion(_) => {
                ApiError::Validation(vec![Violation::new("region", e.to_string())])
            }
            QdError::InvalidCapacity(_) => {
                ApiError::Validation(vec![Violation::new("capacity", e.to_string())])
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<GenError> for ApiError {
    fn from(e: GenError) -> Self {
        let field = match &e {
            GenError::InvalidConfig(v) => return ApiError::Validation(v.clone()),
            GenError::WalkDimension { .. } => "dim",
            GenError::EvenSteps(_) => "steps",
            GenError::InvalidSpan(_) => "span",
            GenError::LatentDimension { .. } | GenError::NonFiniteLatent => "latent",
            GenError::InsufficientData { .. } => "samples",
            _ => return ApiError::Internal(e.to_string()),
        };
        ApiError::Validation(vec![Violation::new(field, e.to_string())])
    }
}

impl From<SurrogateError> for ApiError {
    fn from(e: SurrogateError) -> Self {
        ApiError::Internal(e.to_string())
    }
}
