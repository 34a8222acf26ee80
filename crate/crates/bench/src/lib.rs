//! Benchmark protocols, run configuration and report output for the
//! `canon-engine` CLI.

pub mod backend;
pub mod bo_synthetic;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evals;
pub mod report;
pub mod rotation;
pub mod run;
pub mod sweep;

pub use crate::config::{RunConfig, Task};
pub use crate::error::{BenchError, Result};
pub use crate::run::{run, run_config, Overrides, RunOutcome};
