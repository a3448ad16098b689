//! Gridless mmWave MIMO channel estimation by two-dimensional atomic-norm
//! minimization, with grid-based baselines, demodulation, and a Monte-Carlo
//! experiment harness.

pub mod array;
pub mod baselines;
pub mod demod;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod signal;
pub mod toeplitz;

pub use error::{Error, Result};
