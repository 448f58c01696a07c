use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("initial seed too large: 3.5 * i0 = {needed} exceeds population {n_pop}")]
    SeedTooLarge { needed: f64, n_pop: f64 },

    #[error("degenerate generation interval: rho/delta + 1/gamma = {0}")]
    DegenerateGeneration(f64),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("day range [{from}, {to}] invalid for horizon {horizon}")]
    DayRange { from: usize, to: usize, horizon: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid expected value {value} at index {index}")]
    InvalidRate { index: usize, value: f64 },

    #[error("value {value} outside the domain of the {transform} transform")]
    TransformDomain { transform: &'static str, value: f64 },

    #[error("hessian is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("singular hessian (condition number {condition_number:e})")]
    SingularHessian { condition_number: f64 },

    #[error("parameter {0} is not free in this fit spec")]
    NotFree(String),

    #[error("profile curve inconsistent: {0}")]
    InconsistentProfile(String),

    #[error("zero-norm sensitivity vector")]
    ZeroNorm,

    #[error("too many failed replicates in {cell}: {failed} of {total}")]
    TooManyFailures {
        cell: String,
        failed: usize,
        total: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
