//! Simulation, limit constants and Monte Carlo verification for power
//! variations of Lévy-driven moving averages.

pub mod config;
pub mod constants;
pub mod error;
pub mod kernel;
pub mod mc_harness;
pub mod quad;
pub mod simulate;
pub mod stable_rng;
pub mod statistics;

pub use error::{Error, Result};
