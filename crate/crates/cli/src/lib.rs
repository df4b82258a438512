//! Harness behind the `gsf` binary: simulation-model registry, replication
//! runner, dataset ingestion, and report emission.

pub mod config;
pub mod error;
pub mod io;
pub mod registry;
pub mod report;
pub mod runner;

pub use error::{exit_code, CliError, Result};
