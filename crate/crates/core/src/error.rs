use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension must be 2, 3 or 4, got {0}")]
    Dimension(usize),

    #[error("expected {expected} coordinates, got {got}")]
    CoordinateCount { expected: usize, got: usize },

    #[error("coordinate {0} exceeds the supported lattice range")]
    CoordinateRange(i64),

    #[error("sites {from} and {to} are not nearest neighbours")]
    NotAdjacent { from: String, to: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("event is not increasing: {0}")]
    NonMonotone(String),

    /// A finite-volume computation ran into the edge of its box; the caller
    /// should retry with a larger `box_radius`.
    #[error("truncated by the finite box: {0}")]
    Truncated(String),

    #[error("estimation failed: {0}")]
    Estimation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
