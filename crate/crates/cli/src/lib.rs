//! Experiment runner: validated JSON configs in, checksummed run directories
//! with tables, raw samples and verdicts out.

pub mod config;
pub mod experiments;
pub mod output;
pub mod verdict;

pub use config::{load_and_validate, parse_and_validate, ExperimentConfig, Kind, Violations};
pub use experiments::{run, run_in, Outcome};
pub use verdict::{Contract, Part, VerdictDocument};
