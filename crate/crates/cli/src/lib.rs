//! Batch runner around the `deepmso` core: experiment files, single runs,
//! on/off comparisons, parameter sweeps and invariant checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod summary;

pub use commands::{check, compare, run, sweep, CheckReport, CompareReport, SweepAxis, SweepIndex};
pub use config::{emit, override_key, parse_experiment, parse_experiment_str};
pub use error::{CliError, CliResult, ErrorKind};
pub use summary::RunSummary;
