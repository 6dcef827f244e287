//! Gaussian-process surrogates and Sobol sampling.

mod gp;
pub mod optimize;
mod sobol;

use thiserror::Error;

pub use gp::{kernel, FitReport, GpBounds, GpHyperparams, GpModel, NOISE_FLOOR};
pub use sobol::{sobol_points, SobolStream, MAX_DIMENSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("Sobol dimension {0} is outside 1..={MAX_DIMENSION}")]
    UnsupportedDimension(usize),
    #[error("expected input dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{inputs} input rows but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("need more training points, got {0}")]
    InsufficientData(usize),
    #[error("training data contains non-finite values")]
    NonFiniteData,
    #[error("invalid GP hyperparameters {0:?}")]
    InvalidHyperparams(GpHyperparams),
    #[error("kernel matrix is not positive definite")]
    SingularKernel,
    #[error("malformed model file: {0}")]
    Format(String),
}
