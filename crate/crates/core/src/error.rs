use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid dimension {requested} for a vector of length {available}")]
    InvalidDimension { requested: usize, available: usize },

    #[error("vector contains a non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("trimmed mean needs more than {needed} inputs, got {available}")]
    TrimBudget { needed: usize, available: usize },

    #[error("Weiszfeld iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("logistic gradient inversion infeasible: sigma(t/s) = s has no root on (0,1) for t = {target_dot:e}")]
    InfeasibleInversion { target_dot: f64 },

    #[error("target is not manipulable: witness norm {witness:.6} exceeds threshold {threshold:.6}")]
    NotManipulable { witness: f64, threshold: f64 },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run seed={seed} d={d} P={poisons}: {source}")]
    InCell {
        seed: u64,
        d: usize,
        poisons: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad IDX magic: {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("unsupported IDX element type 0x{0:02x}")]
    UnsupportedType(u8),

    #[error("truncated IDX payload: header declares {declared} bytes, found {found}")]
    TruncatedPayload { declared: usize, found: usize },

    #[error("CSV schema mismatch: {0}")]
    Schema(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
