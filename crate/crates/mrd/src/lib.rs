//! Multiple randomization designs for two-sided marketplace experiments.
//!
//! Buyers index rows and sellers index columns of an I×J assignment matrix.
//! Designs randomize along both axes; under local interference each cell's
//! outcome depends on its exposure type, and the type means give unbiased
//! direct and spillover estimates with exact finite-population variances.

pub mod core;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod oracle;
pub mod outcomes;
pub mod stats;
pub mod variance;

pub use crate::error::{MrdError, Result};
