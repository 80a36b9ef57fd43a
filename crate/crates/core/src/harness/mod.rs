//! Experiment plumbing: configuration, scenarios, baselines, sweeps and the CLI.

pub mod cli;
pub mod config;
pub mod policy;
pub mod scenario;
pub mod stats;
pub mod sweeps;

pub use config::{ExperimentConfig, ScenarioKind};
pub use policy::{
    evaluate, run_policy_day, train_agent, BaselinePolicy, DayResult, Policy, PolicyKind,
};
pub use scenario::{build_scenario, split_publishers, Scenario};
pub use stats::Summary;
pub use sweeps::{energy_sweep, latency_sweep, EnergyTable, LatencyTable, RunMode};
