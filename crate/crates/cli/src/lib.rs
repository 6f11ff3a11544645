//! Command-line driver for `cgnmt`: run configs, experiments, and reports.

pub mod config;
pub mod data;
pub mod experiments;

mod commands;

pub use commands::{run_command, scale_file_name, usage};
