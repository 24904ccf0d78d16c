//! Numerical laboratory for mean-field portfolio games under exponential utility
//! with Brownian and jump noise.
//!
//! The crate simulates common and idiosyncratic noise, solves the single-agent
//! and auxiliary jump BSDEs on an exact lattice or by least-squares Monte Carlo,
//! performs the exponential change of measure, and reconstructs the mean-field
//! equilibrium strategy from a cross-agent projection.

pub mod basis;
pub mod claim;
pub mod equilibrium;
pub mod error;
pub mod jbsde;
pub mod market;
pub mod measure_change;
pub mod oracle;
pub mod projection;
pub mod rng;
pub mod stats;
pub mod types;

pub use error::{Error, Result};
