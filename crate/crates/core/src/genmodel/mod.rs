//! Generative shape model: a convolutional VAE trained on archive bitmaps,
//! GP predictors over its latent space, latent walks and large generated
//! sets.

mod latent;
pub mod layers;
mod vae;

use thiserror::Error;

use crate::encoding::EncodingError;
use crate::qd::QdError;
use crate::surrogate::SurrogateError;
use crate::validate::{summarize, Violation};

pub use latent::{
    fit_latent_predictors, generate_set, latent_walk, latent_walk_grid, walk_offsets,
    write_walk_csv, GeneratedRow, GeneratedSet, IsolineBin, LatentPrediction, LatentPredictorSet,
    WalkPoint, DEFAULT_WALK_SPAN, DEFAULT_WALK_STEPS, GENERATED_CSV_HEADER, MIN_PREDICTOR_SAMPLES,
    WALK_CSV_HEADER,
};
pub use vae::{
    kl_divergence, threshold, train_vae, train_vae_with_progress, EpochLoss, LossParts, VaeConfig,
    VaeModel, MIN_TRAINING_BITMAPS, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("invalid configuration: {}", summarize(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("bitmap resolution {got} does not match the model's {expected}")]
    ResolutionMismatch { expected: usize, got: usize },
    #[error("latent has {got} components, model expects {expected}")]
    LatentDimension { expected: usize, got: usize },
    #[error("latent components must be finite")]
    NonFiniteLatent,
    #[error("walk dimension {dim} out of range for a {latent_dim}-dimensional latent space")]
    WalkDimension { dim: usize, latent_dim: usize },
    #[error("walk steps must be odd, got {0}")]
    EvenSteps(usize),
    #[error("walk span must be finite and non-negative, got {0}")]
    InvalidSpan(f64),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Qd(#[from] QdError),
}

impl GenError {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, GenError::Encoding(EncodingError::DegenerateShape))
    }
}
