use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("optimizer diverged after {iterations} iterations (gradient norm {gradient_norm:.3e}): {reason}")]
    OptimizerDiverged {
        iterations: usize,
        gradient_norm: f64,
        reason: String,
    },

    #[error("non-finite stored energy encountered; data or time step too large")]
    NonFiniteEnergy,

    #[error("time {t} outside the interpolation range [0, {end}]")]
    OutOfRange { t: f64, end: f64 },

    #[error("all sampled pairs had zero distance")]
    DegenerateSample,

    #[error("reference step {reference_h} exceeds 1/8 of the smallest ladder step {min_h}")]
    ReferenceTooCoarse { reference_h: f64, min_h: f64 },

    #[error("degenerate convergence study: {0}")]
    DegenerateStudy(String),

    #[error("step {index} failed: {source}")]
    StepFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical solver, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::OptimizerDiverged { .. }
            | Error::NonFiniteEnergy
            | Error::DegenerateSample
            | Error::DegenerateStudy(_) => true,
            Error::StepFailed { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}
