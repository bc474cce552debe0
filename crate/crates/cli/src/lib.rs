//! Experiment driver for the rigidlab toolkit: seeded map families, the five
//! experiment commands and their file outputs.

// negated comparisons are how NaN fails range checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod family;
pub mod output;

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
