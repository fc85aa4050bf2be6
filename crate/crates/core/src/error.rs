use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An argument outside its mathematical domain. `field` names the
    /// offending input so front-ends can point at it.
    #[error("invalid {field}: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("ill-conditioned {0}")]
    Conditioning(String),

    #[error("unsupported delay model: {0}")]
    UnsupportedModel(String),

    #[error("the plant cannot be stabilized even without packet dropout")]
    PlantNotStabilizable,

    #[error("no convergence after {iterations} iterations (last relative step {step:e})")]
    NotConverged { iterations: usize, step: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics themselves rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Conditioning(_) | Error::NotConverged { .. } | Error::Numeric(_)
        )
    }
}
