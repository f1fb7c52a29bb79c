use thiserror::Error;

/// Errors raised by the co-clustering toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error(
        "Gibbs kernel underflows to zero across an entire {axis} {index}; enable log-domain mode"
    )]
    DegenerateKernel { axis: &'static str, index: usize },

    #[error("no sample converged")]
    NoConvergedSample,

    #[error("{} row(s) never sampled within the coverage cap: {rows:?}", rows.len())]
    CoverageUnreachable { rows: Vec<usize> },

    #[error("index {0} appears in no retained sample")]
    CoverageViolation(usize),

    #[error("kernel bandwidth is zero (all points identical); pass an explicit sigma")]
    ZeroBandwidth,
}

pub type Result<T> = std::result::Result<T, Error>;
