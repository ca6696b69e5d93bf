use thiserror::Error;

/// Errors produced by the numerical routines.
///
/// Domain errors are programmer-facing contract violations (negative time,
/// evaluation at a singular point). Accuracy/convergence errors carry enough
/// context to locate the offending evaluation.
#[derive(Error, Debug, Clone)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not reach the requested accuracy: {context} (estimate {estimate:.3e}, error {error:.3e})")]
    Accuracy {
        context: String,
        estimate: f64,
        error: f64,
    },

    #[error("no geometric decay detected: {0}")]
    Convergence(String),

    #[error("contraction threshold not found: {0}")]
    ThresholdNotFound(String),

    #[error("contraction violated: measured term ratio {ratio:.3} at term {term}")]
    ContractionViolation { ratio: f64, term: usize },

    #[error("kernel quality: {0}")]
    KernelQuality(String),

    #[error("bound violation: {0}")]
    BoundViolation(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
