use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid mesh: {0}")]
    MeshValidation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("damage minimization did not converge after {iterations} iterations (projected gradient {residual:.3e})")]
    DamageConvergence { iterations: usize, residual: f64 },

    #[error("step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("negative temperature {value:.6e} at node {node}")]
    NegativeTemperature { node: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
