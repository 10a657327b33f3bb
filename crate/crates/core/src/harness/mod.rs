//! Scenario loading, the simulation loop, run logs and metric reports.

pub mod fixtures;
mod logs;
mod report;
mod scenario;
mod world;

pub use logs::{EventRow, InstanceRow, LoadRow, MessageRow, PathRow, RuleRow, RunLogs, TransactionRow};
pub use report::{
    compare, emit, read_report, ComparisonSummary, Format, LatencyStats, MetricDelta, MetricsReport, ReportError,
};
pub use scenario::{
    digest, parse_scenario, parse_scenario_str, FlowSpec, NodeSpec, Params, PoliciesSpec, RandomWaypoints, Scenario,
    ScenarioError,
};
pub use world::{run, DecisionProfile, RunError, RunOutput};

use crate::mmapp::RunMode;

/// Runs the same scenario in both modes on two threads.
pub fn run_both(scenario: &Scenario) -> Result<(RunOutput, RunOutput), RunError> {
    std::thread::scope(|s| {
        let a = s.spawn(|| run(scenario, RunMode::Mmaas));
        let b = run(scenario, RunMode::LegacyCentralized);
        let a = a.join().expect("simulation thread panicked");
        Ok((a?, b?))
    })
}
