use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}: line {line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("zero total mass")]
    ZeroMass,

    #[error("non-square pixels: side {side_x} along x vs {side_y} along y")]
    NonSquarePixels { side_x: f64, side_y: f64 },

    #[error("duplicate support points at ({x}, {y})")]
    DuplicatePoints { x: f64, y: f64 },

    #[error("invalid mass {value} at index {index}: masses must be positive and finite")]
    InvalidMass { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unbalanced problem: source mass {source_mass} vs target mass {target_mass}")]
    Unbalanced { source_mass: f64, target_mass: f64 },

    #[error("problem too large: {cells} cost entries exceed the limit of {limit}")]
    TooLarge { cells: usize, limit: usize },

    #[error("non-finite objective value at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
