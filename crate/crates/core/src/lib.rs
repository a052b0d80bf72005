//! Simulation and verification of the virtual index auction for separable
//! bandit environments.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod environments;
pub mod error;
pub mod gittins;
pub mod mechanism;
pub mod output;
pub mod quadrature;
pub mod rng;
pub mod verification;
pub mod virtual_value;

pub use error::{Error, Result};
