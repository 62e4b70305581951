//! The 25 lead configurations and their orchestration.

pub mod config;
pub mod runner;
pub mod spec;

pub use config::{ModelSection, RunConfig, Selection};
pub use runner::{run_all, run_experiment, write_report, ExperimentDir, RunContext, RunManifest, RunSummary};
pub use spec::{enumerate_lead_configs, ExperimentGroup, ExperimentRegistry, ExperimentSpec, TableGroup};
