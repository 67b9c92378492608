//! Scenario files, built-in experiments, replica runner and reports.

pub mod presets;
pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{Format, GroupReport, Report, ScenarioReport, VmReport};
pub use runner::{run_all, run_scenario, sweep, RunError};
pub use scenario::{Scenario, ScenarioError};
