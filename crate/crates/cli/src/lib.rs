//! Experiment driver for the `cugro` library: dataset collection, sequence
//! training, checkpoint evaluation, parameter sweeps and SVG plots.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! divergence.

pub mod commands;
pub mod config;
mod error;
pub mod plot;

pub use error::{CliError, CliResult};
