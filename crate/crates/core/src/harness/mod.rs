//! Scenario runner and metrics pipeline for the QoS experiments.
//!
//! Scenarios run in virtual time by default ([`run_scenario`]); the
//! realtime runner drives the real stub against an in-process portal.

pub mod builders;
pub mod metrics;
pub mod network;
pub mod realtime;
pub mod report;
pub mod scenario;
pub mod sim;

pub use metrics::{compute_sd, Aggregates, EmptyInput, RequestRow};
pub use network::inject_network;
pub use report::{emit_report, load_report, MetricsReport};
pub use scenario::{ClientMode, Deployment, Scenario, ScenarioError};

/// Runs `sc` in virtual time against `deployment`.
pub fn run_scenario(
    sc: &Scenario,
    deployment: &Deployment,
) -> Result<MetricsReport, ScenarioError> {
    let rows = sim::simulate(sc, deployment)?;
    Ok(MetricsReport::new(sc, rows, false))
}
