use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical check failed: {0}")]
    Numerics(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("zero-probability branch: {0}")]
    ZeroProbability(String),

    #[error("measurement is not complete: {0}")]
    NotCompleteMeasurement(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("strategy count {count} exceeds the oracle limit {limit}")]
    OracleTooLarge { count: u64, limit: u64 },

    #[error("strategy error: {0}")]
    Strategy(String),

    /// A load-time invariant failed; `location` is a JSON-pointer style path.
    #[error("{check} failed at {location} (residual {residual:.3e})")]
    Invariant {
        location: String,
        check: String,
        residual: f64,
    },
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numerics(_) => "numerics",
            Error::State(_) => "state",
            Error::Domain(_) => "domain",
            Error::ZeroProbability(_) => "zero_probability",
            Error::NotCompleteMeasurement(_) => "not_complete_measurement",
            Error::Config(_) => "config",
            Error::OracleTooLarge { .. } => "oracle_too_large",
            Error::Strategy(_) => "strategy",
            Error::Invariant { .. } => "invariant",
        }
    }

    /// Location of the offending input, when the error carries one.
    pub fn location(&self) -> Option<&str> {
        match self {
            Error::Invariant { location, .. } => Some(location),
            _ => None,
        }
    }

    /// Prefix the location of an invariant error with `parent`.
    pub fn under(self, parent: &str) -> Self {
        match self {
            Error::Invariant {
                location,
                check,
                residual,
            } => Error::Invariant {
                location: if location.is_empty() {
                    parent.to_string()
                } else {
                    format!("{parent}/{location}")
                },
                check,
                residual,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
