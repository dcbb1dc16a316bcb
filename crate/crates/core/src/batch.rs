//! Running many independent scenarios.
//!
//! Each scenario is simulated and verified on its own, so the batch is
//! embarrassingly parallel. Results keep the input order either way.

use std::ops::Range;

use crate::metrics::{phase_breakdown, PhaseBreakdown};
use crate::sim::random::random_scenario;
use crate::sim::{run, Scenario, Trace};
use crate::verify::{verify, Report};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub passed: bool,
    pub failed_checks: Vec<String>,
    pub end_time: u64,
    pub breakdown: Vec<PhaseBreakdown>,
}

impl RunSummary {
    pub fn of(trace: &Trace, report: &Report) -> Self {
        RunSummary {
            name: report.scenario.clone(),
            seed: report.seed,
            passed: report.passed(),
            failed_checks: report
                .failures()
                .iter()
                .map(|c| c.name.to_string())
                .collect(),
            end_time: report.end_time,
            breakdown: phase_breakdown(trace),
        }
    }
}

pub fn run_and_verify(sc: &Scenario) -> (Trace, Report) {
    let trace = run(sc);
    let report = verify(&trace);
    (trace, report)
}

fn summarize(sc: &Scenario) -> RunSummary {
    let (trace, report) = run_and_verify(sc);
    RunSummary::of(&trace, &report)
}

pub fn run_many_sequential(scenarios: &[Scenario]) -> Vec<RunSummary> {
    scenarios.iter().map(summarize).collect()
}

#[cfg(feature = "parallel")]
pub fn run_many_parallel(scenarios: &[Scenario]) -> Vec<RunSummary> {
    use rayon::prelude::*;
    scenarios.par_iter().map(summarize).collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn run_many(scenarios: &[Scenario]) -> Vec<RunSummary> {
    map_many(scenarios, summarize)
}

/// Applies `f` to every scenario, in parallel when the `parallel` feature is on.
pub fn map_many<R, F>(scenarios: &[Scenario], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&Scenario) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenarios.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenarios.iter().map(f).collect()
    }
}

/// Generates and runs one random scenario per seed.
pub fn run_random_suite(seeds: Range<u64>) -> Vec<RunSummary> {
    let scenarios: Vec<Scenario> = seeds.map(random_scenario).collect();
    run_many(&scenarios)
}
