use thiserror::Error;

/// Errors raised by the analytic bounds, the lattice machinery and the sampler.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("quadrature did not converge: error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    QuadratureFailure { estimate: f64, tolerance: f64 },

    /// The Mayer function is not known to be integrable.
    #[error("integrability: {0}")]
    Integrability(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration: {0}")]
    Configuration(String),

    #[error("ergodicity: {0}")]
    Ergodicity(String),

    /// Exact enumeration was asked to drop strata whose weight is not negligible.
    #[error("truncation refused: {0}")]
    TruncationRefused(String),

    #[error("bisection failed: {0}")]
    Bisection(String),
}

impl Error {
    /// True for failures of the numerical machinery itself (as opposed to bad input).
    pub fn is_computational(&self) -> bool {
        matches!(self, Error::QuadratureFailure { .. } | Error::Bisection(_) | Error::Integrability(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
