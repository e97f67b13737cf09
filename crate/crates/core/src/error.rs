use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by filters, kernels and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("triangular factor is singular (diagonal index {index})")]
    SingularFactor { index: usize },

    /// Innovation covariance lost positive definiteness. `step` is 1-based.
    #[error("singular innovation covariance at step {step}")]
    SingularInnovation { step: usize },

    #[error("filter broke down at step {step}: {message}")]
    StepFailure { step: usize, message: String },

    #[error("parameter outside model domain: {0}")]
    Domain(String),

    #[error("non-finite loglik evaluation while differencing coordinate {coordinate}")]
    NonFinite { coordinate: usize },

    #[error("reference oracle failed: {0}")]
    OracleFailure(String),

    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-parsable class token used in CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) | Error::Domain(_) | Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::NotPositiveDefinite { .. }
            | Error::SingularFactor { .. }
            | Error::SingularInnovation { .. }
            | Error::StepFailure { .. }
            | Error::NonFinite { .. }
            | Error::OracleFailure(_) => "numerical",
        }
    }

    /// Tag a step-local singularity with the 1-based step it occurred at.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::SingularInnovation { .. } => Error::SingularInnovation { step },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
