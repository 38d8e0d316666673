//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-admissible geometry: {0}")]
    Geometry(String),
    #[error("boundary rule assigns internal interface {0}")]
    BoundaryInternal(usize),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid kappa evaluation: {0}")]
    Kappa(String),
    #[error("linear solver failure: {0}")]
    LinearSolver(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
