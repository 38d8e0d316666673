//! Nonlinear full approximation scheme multigrid for heterogeneous nonlinear diffusion
//! discretized by mixed two-point flux finite volumes.

pub mod coarsen;
pub mod dense;
pub mod error;
pub mod fas;
pub mod field_io;
pub mod level;
pub mod linsolve;
pub mod mesh;
pub mod partition;
pub mod problems;
pub mod sparse;
pub mod tpfa;

pub use error::{Error, Result};
