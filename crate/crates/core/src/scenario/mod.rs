//! Scenario files, experiment orchestration and golden traces.

pub mod config;
pub mod golden;
pub mod run;

pub use config::{ConfigError, ScenarioConfig};
pub use golden::{check, run_golden, Golden};
pub use run::{build_sim, run_scenario, sweep, Cell, RunError};
