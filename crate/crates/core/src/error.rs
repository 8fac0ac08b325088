use thiserror::Error;

use crate::lp::LpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("functions live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("design matrix is rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point {point:?} lies outside the design domain")]
    DomainViolation { point: Vec<f64> },

    #[error("{failed} of {total} bootstrap evaluations failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("{failed} of {total} replications failed")]
    ReplicationFailures { failed: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
