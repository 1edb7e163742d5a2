use thiserror::Error;

/// Errors raised across the estimation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank condition violated: {0}")]
    Rank(String),

    #[error("covariance lost positive definiteness: {0}")]
    CovarianceFloor(String),

    #[error("model evaluation produced a non-finite value at coordinate {coordinate}: {context}")]
    Evaluation { coordinate: usize, context: String },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations: {context}")]
    NonConvergence { iterations: usize, context: String },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("config error in [{section}] key `{key}`: {message}")]
    Config {
        section: String,
        key: String,
        message: String,
    },

    #[error("subsystem {subsystem} failed at instant {instant}: {source}")]
    Subsystem {
        subsystem: usize,
        instant: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integration failed in vessel {vessel}: {context}")]
    Integration { vessel: usize, context: String },

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(section: &str, key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            section: section.to_string(),
            key: key.to_string(),
            message: message.into(),
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
