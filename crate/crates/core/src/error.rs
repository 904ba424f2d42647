use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("chain length {0} outside supported range [{1}, {2}]")]
    ChainLength(usize, usize, usize),

    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("two-qubit gate targets must be distinct (got {0} twice)")]
    DuplicateTargets(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("readout channel not invertible: effective flip probability {0} >= 0.5")]
    NonInvertibleReadout(f64),

    #[error("time grid is not uniform at sample {0}")]
    NonUniformGrid(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
