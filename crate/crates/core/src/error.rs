use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode index {0}: modes are numbered from 1")]
    InvalidIndex(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("certificate subproblem infeasible: {0}")]
    CertificateInfeasible(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("initialization infeasible: {0}")]
    InitializationInfeasible(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
