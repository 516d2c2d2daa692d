use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration diverged at t = {t} s (dt = {dt} s)")]
    IntegrationDiverged { t: f64, dt: f64 },

    #[error("steady-state solver failed: {0}")]
    SolverFailed(String),

    #[error("nonphysical root: {0}")]
    NonPhysical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular normal matrix with ridge_lambda = 0; set ridge_lambda > 0")]
    SingularSystem,

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("dataset layout: {0}")]
    DatasetLayout(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
