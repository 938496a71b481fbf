//! Experiment runner for dynamic alternative routing: TOML experiment
//! documents, parallel replications, CSV/JSON output and the `darsim`
//! command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod output;
pub mod runner;
pub mod verify;

pub use cli::run_command;
pub use config::{parse_config, ConfigError, ExperimentSpec};
