//! File formats, configuration and subcommands for the `bridgefit` tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod truth;

pub use commands::{report, resume, run, synth, ReportOptions, RunOptions, RunOutcome};
pub use config::{LoadedConfig, RunConfig, SensorSpec};
pub use error::CliError;
