//! Quality-diversity search over shape genomes: a Voronoi archive niched by
//! normalized (area, enstrophy) and the surrogate-assisted loop that fills
//! it.

mod archive;
mod cvt;
mod features;
mod illuminate;
mod sphen;

use thiserror::Error;

use crate::encoding::EncodingError;
use crate::surrogate::SurrogateError;
use crate::validate::{summarize, Violation};

pub use archive::{AssignOutcome, Elite, Provenance, VoronoiArchive, ARCHIVE_CSV_HEADER};
pub use cvt::{cvt_centroids, NearestIndex, CVT_ITERATIONS, CVT_POINTS_PER_CENTROID};
pub use features::{FeatureRange, FeatureRegion, FeatureSpace};
pub use illuminate::{
    illuminate, mutate, planned_children, select_acquisitions, select_among, IlluminationConfig,
    IlluminationReport, Prediction, Predictor, TraceEvent,
};
pub use sphen::{
    grow_archive, sphen_run, sphen_run_with_progress, Counters, Evaluator, LbmEvaluator,
    Measurement, Models, Phase, Progress, RoundStats, RunOutcome, RunResult, Sample, SphenConfig,
    SyntheticEvaluator,
};

#[derive(Debug, Error)]
pub enum QdError {
    #[error("archive capacity must be at least 1, got {0}")]
    InvalidCapacity(usize),
    #[error("feature range [{lo}, {hi}] is empty or not finite")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("feature region {0:?} must lie in the unit square with positive width and height")]
    InvalidRegion(FeatureRegion),
    #[error("features and fitness must be finite")]
    NonFinite,
    #[error("archive has no elites")]
    EmptyArchive,
    #[error("requested {requested} acquisitions but only {available} candidate elites")]
    InsufficientElites { requested: usize, available: usize },
    #[error("invalid configuration: {}", summarize(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("malformed archive data: {0}")]
    Format(String),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

impl From<csv::Error> for QdError {
    fn from(e: csv::Error) -> Self {
        QdError::Format(e.to_string())
    }
}

impl From<std::io::Error> for QdError {
    fn from(e: std::io::Error) -> Self {
        QdError::Format(e.to_string())
    }
}
