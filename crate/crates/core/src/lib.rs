//! Multi-output Gaussian processes with harmonizable spectral mixture kernels.

pub mod data;
pub mod error;
pub mod gp;
pub mod init;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod random;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
