//! Long-range statistics of electromagnetic waves in random rectangular
//! waveguides.
//!
//! The crate enumerates the TE/TM modes of the ideal guide, assembles the
//! covariances of the random mode-coupling processes, evaluates the
//! diffusion-limit moment matrices (mean amplitudes, scattering mean free
//! paths), builds the energy-transport operator with its equipartition
//! state, and validates the limit by Monte Carlo simulation.

pub mod coupling;
pub mod error;
pub mod linalg;
pub mod medium;
pub mod modes;
pub mod moments;
pub mod montecarlo;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
