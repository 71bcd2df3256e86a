use thiserror::Error;

use crate::fixed_point::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("argument {value} outside domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("iteration diverged after {} steps (last residual {last_residual:e})", trace.iterations_used)]
    Divergence {
        trace: IterationTrace,
        last_residual: f64,
    },

    #[error("iteration diverged: spectral radius certificate ρ(W) = {spectral_radius} is not below 1")]
    CertificateViolated {
        spectral_radius: f64,
        trace: IterationTrace,
    },

    #[error("operator is not contractive (q = {0}); depth bound undefined")]
    NonContractive(f64),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("training failed at step {step}: {reason}")]
    Training {
        step: usize,
        reason: String,
        theta: Vec<f64>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Returns true when the error comes from a numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::CertificateViolated { .. }
                | Error::NonContractive(_)
                | Error::Training { .. }
                | Error::Singular(_)
        )
    }
}
