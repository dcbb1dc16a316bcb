//! Named experiments bundled with the library.

use crate::error::ScenarioError;
use crate::sim::{parse_scenario, Scenario};

const BUNDLED: &[(&str, &str)] = &[
    (
        "worked_example",
        include_str!("../experiments/worked_example.toml"),
    ),
    (
        "four_transitions",
        include_str!("../experiments/four_transitions.toml"),
    ),
    (
        "cross_protocol",
        include_str!("../experiments/cross_protocol.toml"),
    ),
    ("preemption", include_str!("../experiments/preemption.toml")),
    (
        "post_h_commits",
        include_str!("../experiments/post_h_commits.toml"),
    ),
    (
        "equivocation",
        include_str!("../experiments/equivocation.toml"),
    ),
];

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn load(name: &str) -> Result<Scenario, ScenarioError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::UnknownExperiment(name.to_string()))?;
    parse_scenario(text)
}
