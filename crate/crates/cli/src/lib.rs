//! Command-line harness: dataset ingestion, run configs, sweeps and plots.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod plot;
pub mod run;
pub mod sweep;

pub use error::{CliError, CliResult};
