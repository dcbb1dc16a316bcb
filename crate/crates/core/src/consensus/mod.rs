//! The consensus interface the reconfiguration engine depends on, and two
//! reference protocols behind it.
//!
//! An instance is a deterministic state machine: it reacts to proposals,
//! messages and timer firings by pushing [`Effect`]s, and yields decided
//! entries through [`ConsensusPort::poll_decided`] strictly in position order.
//! It never reads a clock.
//!
//! * [`sequencer::Sequencer`]: a fixed leader orders proposals by arrival and
//!   commits strictly in order; round-robin failover on leader silence.
//! * [`multilane::MultiLane`]: every member owns a lane, lane slots are
//!   interleaved round-robin into positions and commit independently, so
//!   later positions can commit before earlier ones.

pub mod multilane;
pub mod sequencer;
pub mod testkit;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConsensusKind, EntryContent, EpochConfig, EpochId, Hash, InnerLogEntry};
use multilane::{LaneMsg, LaneTimer, MultiLane};
use sequencer::{SeqMsg, SeqTimer, Sequencer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("consensus instance halted")]
pub struct Halted;

/// Timeouts and pacing for the reference protocols, in simulated ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusTiming {
    /// Sequencer: a replica with pending work and no progress for this long
    /// moves to the next view.
    pub view_timeout: u64,
    /// MultiLane: a lane with queued work proposes one slot per interval.
    pub slot_interval: u64,
    /// MultiLane: a lane that has not proposed for a known round this long
    /// after the round was first seen is voted a no-op. Must exceed twice the
    /// maximum link latency.
    pub noop_timeout: u64,
}

impl Default for ConsensusTiming {
    fn default() -> Self {
        ConsensusTiming {
            view_timeout: 300,
            slot_interval: 10,
            noop_timeout: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMsg {
    Seq(SeqMsg),
    Lane(LaneMsg),
}

impl ConsensusMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            ConsensusMsg::Seq(m) => m.kind(),
            ConsensusMsg::Lane(m) => m.kind(),
        }
    }

    /// Lane whose slot this message concerns, if any.
    pub fn lane(&self) -> Option<usize> {
        match self {
            ConsensusMsg::Lane(LaneMsg::Vote { lane, .. }) => Some(*lane),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusTimer {
    Seq(SeqTimer),
    Lane(LaneTimer),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// Send to the member at slot `to` of the epoch configuration.
    Send {
        to: usize,
        msg: ConsensusMsg,
    },
    SetTimer {
        after: u64,
        timer: ConsensusTimer,
    },
    /// Position `position` committed internally (it may not be releasable yet).
    Committed {
        position: u64,
    },
}

/// `propose` / `poll_decided` / `halt`, plus the hooks a driver needs.
pub trait ConsensusPort {
    fn epoch(&self) -> EpochId;
    fn propose(&mut self, content: EntryContent, fx: &mut Vec<Effect>) -> Result<(), Halted>;
    fn on_message(&mut self, from: usize, msg: ConsensusMsg, fx: &mut Vec<Effect>);
    fn on_timer(&mut self, timer: ConsensusTimer, fx: &mut Vec<Effect>);
    /// Next decided entry in position order, or `None` if it is not decided yet.
    fn poll_decided(&mut self) -> Option<InnerLogEntry>;
    /// Stop proposing and voting. Idempotent; decided entries stay readable.
    fn halt(&mut self);
    fn is_halted(&self) -> bool;
}

/// Buffers internally committed entries and releases them in position order.
///
/// A repeated content (same transaction id or system-tx digest) is released
/// as a no-op, which keeps every inner log free of duplicates.
#[derive(Debug, Clone)]
pub struct ReleaseQueue {
    epoch: EpochId,
    next: u64,
    ready: BTreeMap<u64, EntryContent>,
    seen: HashSet<Hash>,
}

impl ReleaseQueue {
    pub fn new(epoch: EpochId) -> Self {
        ReleaseQueue {
            epoch,
            next: 1,
            ready: BTreeMap::new(),
            seen: HashSet::new(),
        }
    }

    /// Returns false if the position was already released or buffered.
    pub fn insert(&mut self, position: u64, content: EntryContent) -> bool {
        if position < self.next || self.ready.contains_key(&position) {
            return false;
        }
        self.ready.insert(position, content);
        true
    }

    pub fn pop(&mut self) -> Option<InnerLogEntry> {
        let content = self.ready.remove(&self.next)?;
        let content = match content.dedup_key() {
            Some(k) if !self.seen.insert(k) => EntryContent::Noop,
            _ => content,
        };
        let entry = InnerLogEntry {
            epoch: self.epoch,
            position: self.next,
            content,
        };
        self.next += 1;
        Some(entry)
    }

    pub fn released(&self) -> u64 {
        self.next - 1
    }

    pub fn was_released(&self, key: &Hash) -> bool {
        self.seen.contains(key)
    }
}

#[derive(Debug, Clone)]
enum Protocol {
    Sequencer(Sequencer),
    MultiLane(MultiLane),
}

/// A replica's endpoint for one epoch's consensus instance.
///
/// Before [`ConsensusReplica::start`] the instance only buffers proposals and
/// messages; incoming replicas create the endpoint early and start it once
/// their prepare step finishes.
#[derive(Debug, Clone)]
pub struct ConsensusReplica {
    proto: Protocol,
    started: bool,
    early_msgs: Vec<(usize, ConsensusMsg)>,
    early_proposals: Vec<EntryContent>,
}

impl ConsensusReplica {
    pub fn new(config: &EpochConfig, me: usize, timing: ConsensusTiming) -> Self {
        let proto = match config.consensus_kind {
            ConsensusKind::Sequencer => Protocol::Sequencer(Sequencer::new(config, me, timing)),
            ConsensusKind::MultiLane => Protocol::MultiLane(MultiLane::new(config, me, timing)),
        };
        ConsensusReplica {
            proto,
            started: false,
            early_msgs: Vec::new(),
            early_proposals: Vec::new(),
        }
    }

    pub fn started(config: &EpochConfig, me: usize, timing: ConsensusTiming) -> Self {
        let mut r = Self::new(config, me, timing);
        r.start(&mut Vec::new());
        r
    }

    pub fn kind(&self) -> ConsensusKind {
        match self.proto {
            Protocol::Sequencer(_) => ConsensusKind::Sequencer,
            Protocol::MultiLane(_) => ConsensusKind::MultiLane,
        }
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn start(&mut self, fx: &mut Vec<Effect>) {
        if self.started {
            return;
        }
        self.started = true;
        for c in std::mem::take(&mut self.early_proposals) {
            let _ = self.propose(c, fx);
        }
        for (from, m) in std::mem::take(&mut self.early_msgs) {
            self.on_message(from, m, fx);
        }
    }

    fn port(&mut self) -> &mut dyn ConsensusPort {
        match &mut self.proto {
            Protocol::Sequencer(s) => s,
            Protocol::MultiLane(m) => m,
        }
    }

    fn port_ref(&self) -> &dyn ConsensusPort {
        match &self.proto {
            Protocol::Sequencer(s) => s,
            Protocol::MultiLane(m) => m,
        }
    }
}

impl ConsensusPort for ConsensusReplica {
    fn epoch(&self) -> EpochId {
        self.port_ref().epoch()
    }

    fn propose(&mut self, content: EntryContent, fx: &mut Vec<Effect>) -> Result<(), Halted> {
        if self.is_halted() {
            return Err(Halted);
        }
        if !self.started {
            self.early_proposals.push(content);
            return Ok(());
        }
        self.port().propose(content, fx)
    }

    fn on_message(&mut self, from: usize, msg: ConsensusMsg, fx: &mut Vec<Effect>) {
        if !self.started {
            self.early_msgs.push((from, msg));
            return;
        }
        self.port().on_message(from, msg, fx)
    }

    fn on_timer(&mut self, timer: ConsensusTimer, fx: &mut Vec<Effect>) {
        if self.started {
            self.port().on_timer(timer, fx)
        }
    }

    fn poll_decided(&mut self) -> Option<InnerLogEntry> {
        self.port().poll_decided()
    }

    fn halt(&mut self) {
        self.port().halt()
    }

    fn is_halted(&self) -> bool {
        self.port_ref().is_halted()
    }
}
