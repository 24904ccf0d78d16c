//! Scenario ingestion, pipeline orchestration and reports for the `jumpmfg` command.

pub mod run;
pub mod scenario;
pub mod verify;

pub use run::{execute, run, Command, Overrides, RunError};
pub use scenario::{load_scenario, Scenario, ScenarioError};
