//! Error type shared by all numerical modules.

use thiserror::Error;

/// Failures reported by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("standing wave at cutoff: mode ({j1},{j2}) has |k^2 - lambda| = {gap:e}")]
    StandingWave { j1: u32, j2: u32, gap: f64 },

    #[error("invalid covariance model: {0}")]
    InvalidModel(String),

    #[error("non-finite sample in {0}")]
    NonFinite(String),

    #[error("quadrature did not converge: achieved relative error {achieved:e} (requested {requested:e})")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("missing coupling entry for mode pair ({0},{1})")]
    MissingEntry(usize, usize),

    #[error("C not positive definite for mode index {j}: smallest eigenvalue {mu:e}")]
    NotPositiveDefinite { j: usize, mu: f64 },

    #[error("transport operator has a trivial kernel (smallest |eigenvalue| {smallest:e})")]
    TrivialKernel { smallest: f64 },

    #[error("cone violation: block {j} has eigenvalue {eig:e} at Z = {z}")]
    ConeViolation { j: usize, eig: f64, z: f64 },

    #[error("Gram matrix indefinite: eigenvalue {0:e}")]
    IndefiniteGram(f64),

    #[error("integration unstable: relative energy drift {drift:e} exceeds 10%; reduce the step size")]
    Unstable { drift: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
