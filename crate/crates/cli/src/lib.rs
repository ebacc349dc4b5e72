//! Library side of the `omg` binary: platform files, deployment, the bench
//! harness and the attack demo, kept here so tests can drive them directly.

pub mod bench;
pub mod error;
pub mod pipeline;
pub mod platform;

use omg_core::adversary::{run_scenario, Scenario, ScenarioReport};

pub use bench::{run_bench, BenchClip, BenchReport, Mode};
pub use error::{CliError, ExitCode};

/// Runs each scenario; `Err` if any defense did not fire.
pub fn demo_attack(scenarios: &[Scenario], seed: u64) -> (Vec<ScenarioReport>, Result<(), CliError>) {
    let reports: Vec<_> = scenarios.iter().map(|s| run_scenario(*s, seed)).collect();
    let failed = reports.iter().filter(|r| !r.defended).count();
    let outcome = if failed == 0 { Ok(()) } else { Err(CliError::AttackFailed { failed, total: reports.len() }) };
    (reports, outcome)
}

pub fn format_scenario(r: &ScenarioReport) -> String {
    format!("{} scenario={} detail={}", if r.defended { "PASS" } else { "FAIL" }, r.scenario, r.detail)
}
