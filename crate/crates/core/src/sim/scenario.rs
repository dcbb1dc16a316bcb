//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! scenario_version = 1
//! name = "example"
//! seed = 7
//! horizon = 20000
//!
//! [network]
//! min_latency = 5
//! max_latency = 15
//!
//! [[epochs]]
//! epoch = 1
//! n = 4
//! f = 1
//! fault_model = "byzantine"
//! consensus = "sequencer"
//!
//! [[schedule]]
//! kind = "client"
//! at = 0
//! txs = ["T1", "T2"]
//! ```
//!
//! Schedule entries are tagged by `kind`: `client`, `workload`,
//! `epoch_change`, `crash`, `silent`, `delay_lane`, `delay_link`,
//! `equivocate_done`, `tamper_sync`, `exval_override`. Replicas are written
//! `[epoch, index]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusTiming;
use crate::error::ScenarioError;
use crate::model::{ConsensusKind, EpochConfig, EpochId, ExvalPolicy, FaultModel, ReplicaId};

pub const SCENARIO_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReplicaRef(pub u64, pub u32);

impl ReplicaRef {
    pub fn of(id: &ReplicaId) -> Self {
        ReplicaRef(id.epoch.0, id.index)
    }

    pub fn epoch(self) -> EpochId {
        EpochId(self.0)
    }
}

impl std::fmt::Display for ReplicaRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "R({},{})", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub min_latency: u64,
    pub max_latency: u64,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel {
            min_latency: 5,
            max_latency: 15,
        }
    }
}

impl DelayModel {
    pub fn mean(&self) -> u64 {
        (self.min_latency + self.max_latency) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    #[serde(flatten)]
    pub consensus: ConsensusTiming,
    /// A client resubmits a transaction not yet in any outer log after this long.
    pub resubmit_timeout: u64,
    pub sync_retry: u64,
    pub ready_resend: u64,
    pub done_resend: u64,
    pub fetch_interval: u64,
    pub fetch_backoff_cap: u64,
    pub quiescence_interval: u64,
    /// Transactions first submitted within this long of the end of the run
    /// are exempt from the liveness check. Defaults to
    /// `10 * mean latency * number of epochs`.
    pub liveness_slack: Option<u64>,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            consensus: ConsensusTiming::default(),
            resubmit_timeout: 400,
            sync_retry: 60,
            ready_resend: 300,
            done_resend: 300,
            fetch_interval: 20,
            fetch_backoff_cap: 160,
            quiescence_interval: 50,
            liveness_slack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    pub epoch: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<u32>>,
    pub f: u32,
    pub fault_model: FaultModel,
    pub consensus: ConsensusKind,
}

impl EpochSpec {
    pub fn indices(&self) -> Vec<u32> {
        match (&self.indices, self.n) {
            (Some(ix), _) => ix.clone(),
            (None, Some(n)) => (1..=n).collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn config(&self) -> EpochConfig {
        EpochConfig::with_indices(
            EpochId(self.epoch),
            self.indices(),
            self.f,
            self.fault_model,
            self.consensus,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResubmitPolicy {
    #[default]
    Timeout,
    Never,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduledEvent {
    /// Submit each payload in `txs`, `spacing` ticks apart.
    Client {
        at: u64,
        txs: Vec<String>,
        #[serde(default)]
        spacing: u64,
        /// Member index of the active epoch to submit to; rotates if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<u32>,
        #[serde(default)]
        resubmit: ResubmitPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resubmit_timeout: Option<u64>,
    },
    /// One transaction `{prefix}-{k}` every `interval` ticks in `[at, until)`.
    Workload {
        at: u64,
        until: u64,
        interval: u64,
        #[serde(default = "default_prefix")]
        prefix: String,
    },
    EpochChange {
        at: u64,
        from: u64,
        to: u64,
    },
    Crash {
        at: u64,
        replica: ReplicaRef,
        /// Crash right after submitting its Ready instead of at `at`.
        #[serde(default)]
        after_ready: bool,
    },
    /// Byzantine silence for the whole run.
    Silent {
        replica: ReplicaRef,
    },
    DelayLane {
        at: u64,
        epoch: u64,
        lane: u32,
        extra: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until: Option<u64>,
    },
    DelayLink {
        at: u64,
        from: ReplicaRef,
        to: ReplicaRef,
        extra: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until: Option<u64>,
    },
    /// The replica signs a conflicting certificate instead of its own.
    EquivocateDone {
        replica: ReplicaRef,
    },
    /// The replica serves corrupted snapshots to incoming members.
    TamperSync {
        replica: ReplicaRef,
    },
    /// Misconfiguration: the replica runs a different validity predicate.
    ExvalOverride {
        replica: ReplicaRef,
        exval: ExvalPolicy,
    },
}

fn default_prefix() -> String {
    "w".into()
}

impl ScheduledEvent {
    pub fn time(&self) -> u64 {
        match self {
            ScheduledEvent::Client {
                at, txs, spacing, ..
            } => at + spacing * txs.len().saturating_sub(1) as u64,
            ScheduledEvent::Workload { until, .. } => *until,
            ScheduledEvent::EpochChange { at, .. }
            | ScheduledEvent::Crash { at, .. }
            | ScheduledEvent::DelayLane { at, .. }
            | ScheduledEvent::DelayLink { at, .. } => *at,
            _ => 0,
        }
    }

    /// Replica this event makes faulty. A validity-predicate override is a
    /// misconfiguration of a correct replica, not a fault.
    pub fn faulty_replica(&self) -> Option<ReplicaRef> {
        match self {
            ScheduledEvent::Crash { replica, .. }
            | ScheduledEvent::Silent { replica }
            | ScheduledEvent::EquivocateDone { replica }
            | ScheduledEvent::TamperSync { replica } => Some(*replica),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_version: u64,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub horizon: u64,
    #[serde(default)]
    pub network: DelayModel,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub exval: ExvalPolicy,
    #[serde(default = "yes")]
    pub trace_messages: bool,
    pub epochs: Vec<EpochSpec>,
    #[serde(default)]
    pub schedule: Vec<ScheduledEvent>,
}

fn yes() -> bool {
    true
}

impl Scenario {
    pub fn configs(&self) -> Vec<EpochConfig> {
        self.epochs.iter().map(EpochSpec::config).collect()
    }

    pub fn epoch_spec(&self, epoch: u64) -> Option<&EpochSpec> {
        self.epochs.iter().find(|e| e.epoch == epoch)
    }

    pub fn has_replica(&self, r: ReplicaRef) -> bool {
        self.epoch_spec(r.0)
            .is_some_and(|e| e.indices().contains(&r.1))
    }

    pub fn liveness_slack(&self) -> u64 {
        self.timing
            .liveness_slack
            .unwrap_or(10 * self.network.mean() * self.epochs.len() as u64)
    }

    /// Faulty replicas per epoch exceed that epoch's threshold.
    pub fn over_threshold(&self) -> bool {
        self.epochs.iter().any(|e| {
            let mut faulty: Vec<_> = self
                .schedule
                .iter()
                .filter_map(|s| s.faulty_replica())
                .filter(|r| r.0 == e.epoch)
                .collect();
            faulty.sort();
            faulty.dedup();
            faulty.len() > e.f as usize
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let sem = |field: String, message: String| Err(ScenarioError::Semantic { field, message });
        if self.scenario_version != SCENARIO_VERSION {
            return Err(ScenarioError::UnsupportedVersion {
                found: self.scenario_version,
                supported: SCENARIO_VERSION,
            });
        }
        if self.epochs.is_empty() {
            return sem("epochs".into(), "at least one epoch required".into());
        }
        if self.network.min_latency == 0 || self.network.min_latency > self.network.max_latency {
            return sem(
                "network".into(),
                "need 0 < min_latency <= max_latency".into(),
            );
        }
        let mut prev = 0;
        for (i, e) in self.epochs.iter().enumerate() {
            if e.epoch <= prev {
                return sem(
                    format!("epochs[{i}].epoch"),
                    "epoch ids must be positive and increasing".into(),
                );
            }
            prev = e.epoch;
            if e.indices.is_none() && e.n.is_none() {
                return sem(
                    format!("epochs[{i}]"),
                    "either n or indices required".into(),
                );
            }
            if let (Some(ix), Some(n)) = (&e.indices, e.n) {
                if ix.len() != n as usize {
                    return sem(
                        format!("epochs[{i}].n"),
                        format!("n = {n} but {} indices", ix.len()),
                    );
                }
            }
            if let Err(v) = e.config().validate() {
                return sem(format!("epochs[{i}]"), v.to_string());
            }
            if e.consensus == ConsensusKind::MultiLane
                && self.timing.consensus.noop_timeout <= 2 * self.network.max_latency
            {
                return sem(
                    "timing.noop_timeout".into(),
                    "must exceed twice max_latency".into(),
                );
            }
        }
        if self.epochs[0].epoch != EpochId::GENESIS.0 {
            return sem(
                "epochs[0].epoch".into(),
                format!("genesis epoch must be {}", EpochId::GENESIS),
            );
        }
        let mut last = 0;
        for (i, ev) in self.schedule.iter().enumerate() {
            let field = |f: &str| format!("schedule[{i}].{f}");
            last = last.max(ev.time());
            if let Some(r) = ev.faulty_replica().or(match ev {
                ScheduledEvent::ExvalOverride { replica, .. } => Some(*replica),
                _ => None,
            }) {
                if !self.has_replica(r) {
                    return sem(field("replica"), format!("unknown replica {r}"));
                }
            }
            match ev {
                ScheduledEvent::EpochChange { from, to, .. } => {
                    if self.epoch_spec(*from).is_none() {
                        return sem(field("from"), format!("unknown epoch {from}"));
                    }
                    if self.epoch_spec(*to).is_none() {
                        return sem(field("to"), format!("unknown epoch {to}"));
                    }
                    if to <= from {
                        return sem(field("to"), "must be after from".into());
                    }
                }
                ScheduledEvent::DelayLane { epoch, lane, .. } => {
                    if !self.has_replica(ReplicaRef(*epoch, *lane)) {
                        return sem(field("lane"), format!("no member {lane} in epoch {epoch}"));
                    }
                }
                ScheduledEvent::DelayLink { from, to, .. } => {
                    for (n, r) in [("from", from), ("to", to)] {
                        if !self.has_replica(*r) {
                            return sem(field(n), format!("unknown replica {r}"));
                        }
                    }
                }
                ScheduledEvent::Workload { interval, .. } if *interval == 0 => {
                    return sem(field("interval"), "must be positive".into());
                }
                _ => {}
            }
        }
        if self.horizon <= last {
            return sem(
                "horizon".into(),
                format!("must exceed last scheduled event at {last}"),
            );
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_on_line(text: &str, line: usize) -> Option<String> {
    let l = text.lines().nth(line - 1)?;
    let (k, _) = l.split_once('=')?;
    Some(k.trim().to_string())
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Syntax {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
    let version = match table.get("scenario_version") {
        None => {
            return Err(ScenarioError::Missing {
                field: "scenario_version",
            })
        }
        Some(v) => v.as_integer().ok_or_else(|| ScenarioError::Invalid {
            field: "scenario_version".into(),
            line: text
                .lines()
                .position(|l| l.trim_start().starts_with("scenario_version"))
                .map_or(0, |p| p + 1),
            message: "must be an integer".into(),
        })?,
    };
    if version != SCENARIO_VERSION as i64 {
        return Err(ScenarioError::UnsupportedVersion {
            found: version.max(0) as u64,
            supported: SCENARIO_VERSION,
        });
    }
    for field in ["seed", "horizon", "epochs"] {
        if !table.contains_key(field) {
            return Err(ScenarioError::Missing { field });
        }
    }
    let sc: Scenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        let field = key_on_line(text, line).unwrap_or_else(|| "scenario".into());
        ScenarioError::Invalid {
            field,
            line,
            message: e.message().to_string(),
        }
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
scenario_version = 1
name = "t"
seed = 3
horizon = 1000

[[epochs]]
epoch = 1
n = 4
f = 1
fault_model = "byzantine"
consensus = "multi_lane"

[[schedule]]
kind = "client"
at = 0
txs = ["a"]
"#;

    #[test]
    fn parses_minimal() {
        let sc = parse_scenario(BASE).unwrap();
        assert_eq!(sc.epochs[0].config().n(), 4);
        assert_eq!(sc.timing, Timing::default());
        assert!(sc.trace_messages);
        let again = parse_scenario(&sc.to_toml()).unwrap();
        assert_eq!(again, sc);
    }

    #[test]
    fn seed_required() {
        let err = parse_scenario(&BASE.replace("seed = 3\n", "")).unwrap_err();
        assert_eq!(err.to_string(), "seed required");
    }

    #[test]
    fn unsupported_version() {
        let err = parse_scenario(&BASE.replace("scenario_version = 1", "scenario_version = 9"))
            .unwrap_err();
        assert!(
            matches!(err, ScenarioError::UnsupportedVersion { found: 9, .. }),
            "{err}"
        );
    }

    #[test]
    fn schema_violation_names_field_and_line() {
        let err = parse_scenario(&BASE.replace("f = 1", "f = \"one\"")).unwrap_err();
        match err {
            ScenarioError::Invalid { field, line, .. } => {
                assert_eq!(field, "f");
                assert_eq!(line, 10);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn config_violation_surfaces() {
        let err = parse_scenario(&BASE.replace("n = 4", "n = 3")).unwrap_err();
        assert!(err.to_string().contains("3 < 3f+1"), "{err}");
    }

    #[test]
    fn horizon_must_follow_schedule() {
        let err = parse_scenario(&BASE.replace("at = 0", "at = 5000")).unwrap_err();
        assert!(err.to_string().starts_with("horizon"), "{err}");
    }
}
