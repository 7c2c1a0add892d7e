//! Experiment harness: JSON configuration, the run pipeline, and
//! deterministic CSV/JSON artifacts.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod experiment;

pub use error::{CliError, CliResult};
