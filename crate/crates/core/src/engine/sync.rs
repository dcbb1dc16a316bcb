//! State transfer to incoming replicas.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::chain::ChainLink;
use crate::model::codec::{put_seq, put_u64, Encode};
use crate::model::{EpochChange, EpochConfig, EpochId, Hash, OuterEntry};

/// An old member's state right after it processed the EpochChange at `ec_pos`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: EpochId,
    pub ec_pos: u64,
    pub ec: EpochChange,
    pub outer_prefix: Vec<OuterEntry>,
    pub chain: Vec<ChainLink>,
}

impl Encode for Snapshot {
    const TAG: &'static [u8] = b"reconf/snapshot";

    fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.epoch.0);
        put_u64(out, self.ec_pos);
        self.ec.encode(out);
        put_seq(out, &self.outer_prefix, |o, e| e.encode(o));
        put_seq(out, &self.chain, |o, l| l.encode(o));
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncStep {
    Complete(Box<Snapshot>),
    /// Ask these additional old members (slots in the old configuration).
    Widen(Vec<usize>),
    Wait,
}

/// Collects snapshot copies until enough of them agree.
#[derive(Debug, Clone)]
pub struct SyncCollector {
    n: usize,
    need: usize,
    start: usize,
    asked: BTreeSet<usize>,
    answered: BTreeSet<usize>,
    copies: BTreeMap<Hash, (Snapshot, BTreeSet<usize>)>,
    complete: bool,
}

impl SyncCollector {
    /// `start` rotates the initial targets so incoming replicas spread their load.
    pub fn new(old: &EpochConfig, start: usize) -> Self {
        SyncCollector {
            n: old.n(),
            need: old.fetch_quorum(),
            start: start % old.n(),
            asked: BTreeSet::new(),
            answered: BTreeSet::new(),
            copies: BTreeMap::new(),
            complete: false,
        }
    }

    pub fn need(&self) -> usize {
        self.need
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn initial_targets(&mut self) -> Vec<usize> {
        (0..self.need).filter_map(|_| self.next_target()).collect()
    }

    fn next_target(&mut self) -> Option<usize> {
        let t = (0..self.n)
            .map(|k| (self.start + k) % self.n)
            .find(|t| !self.asked.contains(t))?;
        self.asked.insert(t);
        Some(t)
    }

    pub fn on_response(&mut self, from: usize, snapshot: Snapshot) -> SyncStep {
        if self.complete || !self.asked.contains(&from) || !self.answered.insert(from) {
            return SyncStep::Wait;
        }
        let digest = snapshot.digest();
        let entry = self
            .copies
            .entry(digest)
            .or_insert_with(|| (snapshot, BTreeSet::new()));
        entry.1.insert(from);
        if entry.1.len() >= self.need {
            self.complete = true;
            return SyncStep::Complete(Box::new(entry.0.clone()));
        }
        if self.answered.len() == self.asked.len() {
            return SyncStep::Widen(self.next_target().into_iter().collect());
        }
        SyncStep::Wait
    }

    /// No agreement in time: ask one more member.
    pub fn on_timeout(&mut self) -> Vec<usize> {
        if self.complete {
            return Vec::new();
        }
        self.next_target().into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientId, ConsensusKind, FaultModel, SourcePos, Transaction};

    fn old(model: FaultModel) -> EpochConfig {
        EpochConfig::with_indices(EpochId(1), 1..=4, 1, model, ConsensusKind::Sequencer)
    }

    fn snap(label: &str) -> Snapshot {
        let tx = Transaction::new(label.as_bytes().to_vec(), ClientId(0));
        Snapshot {
            epoch: EpochId(1),
            ec_pos: 3,
            ec: EpochChange {
                from: EpochId(1),
                next: EpochConfig::with_indices(
                    EpochId(2),
                    5..=8,
                    1,
                    FaultModel::Byzantine,
                    ConsensusKind::Sequencer,
                ),
            },
            outer_prefix: vec![OuterEntry {
                outer_position: 1,
                tx,
                source: SourcePos {
                    epoch: EpochId(1),
                    position: 1,
                },
            }],
            chain: Vec::new(),
        }
    }

    #[test]
    fn matching_quorum_completes() {
        let mut c = SyncCollector::new(&old(FaultModel::Byzantine), 0);
        assert_eq!(c.initial_targets(), vec![0, 1]);
        assert_eq!(c.on_response(0, snap("T1")), SyncStep::Wait);
        assert!(matches!(
            c.on_response(1, snap("T1")),
            SyncStep::Complete(_)
        ));
    }

    #[test]
    fn tampered_copy_widens_and_majority_wins() {
        let mut c = SyncCollector::new(&old(FaultModel::Byzantine), 0);
        c.initial_targets();
        c.on_response(0, snap("T1"));
        assert_eq!(c.on_response(1, snap("forged")), SyncStep::Widen(vec![2]));
        match c.on_response(2, snap("T1")) {
            SyncStep::Complete(s) => assert_eq!(s.outer_prefix[0].tx.label(), "T1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn crash_model_single_copy() {
        let mut c = SyncCollector::new(&old(FaultModel::Crash), 2);
        assert_eq!(c.initial_targets(), vec![2]);
        assert!(matches!(
            c.on_response(2, snap("T1")),
            SyncStep::Complete(_)
        ));
    }

    #[test]
    fn unsolicited_responses_ignored() {
        let mut c = SyncCollector::new(&old(FaultModel::Byzantine), 0);
        c.initial_targets();
        assert_eq!(c.on_response(3, snap("T1")), SyncStep::Wait);
        assert_eq!(c.on_timeout(), vec![2]);
    }
}
