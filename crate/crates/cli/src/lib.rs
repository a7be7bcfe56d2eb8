//! Configuration, orchestration and reporting for the `ergodic` binary.
//!
//! A run is one scenario over one JSON configuration. Every scenario records
//! its declared checks in the report; the exit status is 0 when all required
//! checks pass, 1 when one fails, 2 for configuration errors and 3 when a
//! numerical stage fails.

pub mod config;
pub mod run;

pub use config::{apply_override, parse_config, parse_config_with, ConfigError, Instance, RunConfig, Scenario};
pub use run::{run_scenario, CheckOutcome, RunReport, Status};

pub const EXIT_CONFIG_ERROR: i32 = 2;
