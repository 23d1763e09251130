//! Configuration, experiment registry and output files of the `pilotwave` runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
