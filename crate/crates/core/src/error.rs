use thiserror::Error;

#[derive(Debug, Error)]
pub enum EtdError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("invalid cycle: {0}")]
    InvalidCycle(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("diverged at iteration {t}: {what}")]
    Diverged { t: u64, what: String },
    #[error("empty averaging window (t={t}, averaging_start={start})")]
    EmptyWindow { t: u64, start: u64 },
    #[error("state outside domain: {0}")]
    OutOfDomain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EtdError> = std::result::Result<T, E>;
