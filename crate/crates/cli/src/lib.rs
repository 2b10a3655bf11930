//! Command-line harness: configuration, run orchestration, diagnostics and
//! exports for the block architecture search engine.

pub mod commands;
pub mod config;
pub mod diag;
pub mod error;

pub use commands::{run, Cli, Command, VERSION};
pub use error::CliError;
