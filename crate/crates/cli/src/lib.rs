//! Config-driven experiment runner behind the `fastdiff` binary.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_config_str, ConfigErrors, ExperimentConfig};
pub use runner::{run_experiment, run_sweep, RunSummary};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const RUN_FAILURE: i32 = 2;
    pub const VERIFY_FAILURE: i32 = 3;
}
