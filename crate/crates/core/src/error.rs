use thiserror::Error;

use crate::coefficients::CoefficientError;
use crate::harness::HarnessError;
use crate::io::IoError;
use crate::model::ValidationErrors;
use crate::moments::MomentsError;
use crate::quadrature::QuadratureError;
use crate::simulate::SimulationError;
use crate::spectral::SpectralError;

/// Crate-level error. Each variant carries the originating module's name in
/// its message so CLI output can be traced back to the failing stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model: {0}")]
    Validation(#[from] ValidationErrors),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("quadrature: {0}")]
    Quadrature(#[from] QuadratureError),
    #[error("coefficients: {0}")]
    Coefficients(#[from] CoefficientError),
    #[error("moments: {0}")]
    Moments(#[from] MomentsError),
    #[error("simulate: {0}")]
    Simulation(#[from] SimulationError),
    #[error("harness: {0}")]
    Harness(#[from] HarnessError),
    #[error("io: {0}")]
    Io(#[from] IoError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
