//! Configuration, file formats and subcommands of the `qsurf` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod commands;
pub mod config;
pub mod experiment;
pub mod io;
pub mod manifest;

pub use commands::{execute, Command};
pub use config::{parse_config, ExperimentConfig};
