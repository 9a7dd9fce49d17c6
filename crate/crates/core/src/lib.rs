//! Numerical laboratory for weakly nonlinear stochastic reaction–diffusion
//! models and their paracontrolled analysis.

pub mod besov;
pub mod chaos;
pub mod config;
pub mod error;
pub mod grid;
pub mod noise;
pub mod paracalc;
pub mod quadrature;
pub mod solver;
pub mod trees;

pub use error::{Error, Result};
pub use config::ExperimentConfig;
pub use grid::{Grid, RealField, SpaceTimeField, SpectralField};

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
