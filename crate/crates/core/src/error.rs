use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Rank-one inverse expansion hit a vanishing Schur complement.
    #[error("unstable rank-one update: denominator {denominator:e} below threshold")]
    Stability { denominator: f64 },

    #[error("model has no base training points")]
    Uninitialized,

    #[error("KPI window holds {have} entries, at least 2 required")]
    InsufficientHistory { have: usize },

    #[error("R² undefined for constant targets")]
    UndefinedVariance,

    #[error("invalid state: {0}")]
    State(String),

    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Stability { .. })
    }
}
