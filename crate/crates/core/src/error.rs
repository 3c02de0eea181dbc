use thiserror::Error;

/// Errors raised by families, similarity measures, metric engines and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("family `{family}` does not support {capability}")]
    Capability { family: String, capability: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("score undefined: density is zero at the sample point")]
    UndefinedScore,

    #[error("incompatible target: {0}")]
    IncompatibleTarget(String),

    #[error("divergence is infinite: {0}")]
    DivergenceInfinite(String),

    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: &'static str, detail: String },

    #[error("unknown {kind} `{given}`; valid options: {}", valid.join(", "))]
    UnknownIdentifier {
        kind: &'static str,
        given: String,
        valid: Vec<String>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn numeric(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn capability(family: impl Into<String>, capability: &'static str) -> Self {
        Error::Capability {
            family: family.into(),
            capability,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
