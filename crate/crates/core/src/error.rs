use thiserror::Error;

/// Errors raised by model construction, the solver and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise covariance not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix not positive definite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    NotPositiveDefinite { eigenvalue: f64, largest: f64 },

    #[error("row {row} of the orientation matrix has norm {norm}, expected {expected}")]
    RowNorm { row: usize, norm: f64, expected: f64 },

    #[error("row {row} is zero; direction is undefined")]
    ZeroRow { row: usize },

    #[error("non-finite value in {stage} at outer iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("all trials excluded for placement '{placement}'")]
    AllTrialsExcluded { placement: String },
}

pub type Result<T> = std::result::Result<T, Error>;
