//! The reconfiguration state machines.
//!
//! [`HandoverTracker`] reads one epoch's inner log and decides, identically at
//! every replica, where that epoch ends. [`DoneTally`] reads the successor's
//! inner log and decides when the successor takes over. Both are pure: they
//! consume committed entries and return what happened.

pub mod chain;
pub mod sync;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::codec::Encode;
use crate::model::{
    Done, EntryContent, EpochChange, EpochConfig, EpochId, HandoverCertificate, Hash,
    InnerLogEntry, ReplicaId, SystemTx,
};

pub use chain::{verify_trust_chain, ChainBreak, ChainLink};
pub use sync::{Snapshot, SyncCollector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingReady,
    HandoverFormed,
    AwaitingDone,
    Active,
    ShutDown,
    /// An incoming replica whose transition was preempted.
    Aborted,
}

impl Phase {
    /// Legal successor phases.
    pub fn can_follow(self, prev: Phase) -> bool {
        use Phase::*;
        matches!(
            (prev, self),
            (Idle, AwaitingReady)
                | (AwaitingReady, AwaitingReady)
                | (AwaitingReady, HandoverFormed)
                | (AwaitingReady, Aborted)
                | (HandoverFormed, AwaitingDone)
                | (AwaitingDone, Active)
                | (AwaitingDone, ShutDown)
                | (Active, AwaitingReady)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingTransition {
    pub ec: EpochChange,
    pub ec_hash: Hash,
    pub ec_pos: u64,
    pub counted: BTreeMap<ReplicaId, u64>,
}

impl PendingTransition {
    pub fn expected(&self) -> usize {
        self.ec.next.n()
    }
}

/// What one inner-log entry did to the tracker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackerEvent {
    EpochChange {
        ec: EpochChange,
        position: u64,
        preempted: Option<EpochId>,
    },
    EpochChangeIgnored {
        position: u64,
        reason: String,
    },
    ReadyCounted {
        signer: ReplicaId,
        position: u64,
        count: usize,
        needed: usize,
    },
    ReadyIgnored {
        signer: ReplicaId,
        position: u64,
        reason: String,
    },
    Handover {
        cert: HandoverCertificate,
    },
}

/// Follows the EpochChange / Ready traffic of one epoch's inner log.
#[derive(Debug, Clone)]
pub struct HandoverTracker {
    epoch: EpochId,
    prev_cert_hash: Hash,
    pending: Option<PendingTransition>,
    cert: Option<HandoverCertificate>,
    ingested: u64,
}

impl HandoverTracker {
    /// Tracker for epoch `epoch`, whose own start is certified by `prev_cert_hash`
    /// (the genesis digest for the first epoch).
    pub fn new(epoch: EpochId, prev_cert_hash: Hash) -> Self {
        HandoverTracker {
            epoch,
            prev_cert_hash,
            pending: None,
            cert: None,
            ingested: 0,
        }
    }

    /// Start reading after position `ingested`, with `ec` at `ec_pos` already pending.
    pub fn resume(epoch: EpochId, prev_cert_hash: Hash, ec: EpochChange, ec_pos: u64) -> Self {
        let mut t = Self::new(epoch, prev_cert_hash);
        t.pending = Some(PendingTransition {
            ec_hash: ec.digest(),
            ec,
            ec_pos,
            counted: BTreeMap::new(),
        });
        t.ingested = ec_pos;
        t
    }

    pub fn epoch(&self) -> EpochId {
        self.epoch
    }

    pub fn pending(&self) -> Option<&PendingTransition> {
        self.pending.as_ref()
    }

    pub fn cert(&self) -> Option<&HandoverCertificate> {
        self.cert.as_ref()
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    pub fn on_entry(&mut self, entry: &InnerLogEntry) -> Vec<TrackerEvent> {
        if entry.epoch != self.epoch || entry.position <= self.ingested || self.cert.is_some() {
            return Vec::new();
        }
        self.ingested = entry.position;
        match &entry.content {
            EntryContent::System {
                tx: SystemTx::EpochChange(ec),
            } => self.on_epoch_change(ec, entry.position),
            EntryContent::System {
                tx: SystemTx::Ready(r),
            } => self.on_ready(r, entry.position),
            _ => Vec::new(),
        }
    }

    fn on_epoch_change(&mut self, ec: &EpochChange, position: u64) -> Vec<TrackerEvent> {
        let ignored = |reason: String| vec![TrackerEvent::EpochChangeIgnored { position, reason }];
        if ec.from != self.epoch {
            return ignored(format!("announced from epoch {}", ec.from));
        }
        if ec.next.epoch <= self.epoch {
            return ignored(format!(
                "next epoch {} not after {}",
                ec.next.epoch, self.epoch
            ));
        }
        if let Err(v) = ec.next.validate() {
            return ignored(v.to_string());
        }
        let preempted = self.pending.as_ref().map(|p| p.ec.next.epoch);
        if let Some(p) = preempted {
            if ec.next.epoch <= p {
                return ignored(format!(
                    "next epoch {} does not supersede pending {}",
                    ec.next.epoch, p
                ));
            }
        }
        self.pending = Some(PendingTransition {
            ec: ec.clone(),
            ec_hash: ec.digest(),
            ec_pos: position,
            counted: BTreeMap::new(),
        });
        vec![TrackerEvent::EpochChange {
            ec: ec.clone(),
            position,
            preempted,
        }]
    }

    fn on_ready(&mut self, r: &crate::model::Ready, position: u64) -> Vec<TrackerEvent> {
        let signer = r.body.signer;
        let ignored = |reason: &str| {
            vec![TrackerEvent::ReadyIgnored {
                signer,
                position,
                reason: reason.into(),
            }]
        };
        let Some(p) = self.pending.as_mut() else {
            return ignored("no pending epoch change");
        };
        if r.body.ec_hash != p.ec_hash || r.body.from != self.epoch || r.body.to != p.ec.next.epoch
        {
            return ignored("stale epoch change");
        }
        if !p.ec.next.contains(&signer) {
            return ignored("signer not in next configuration");
        }
        if !r.verify() {
            return ignored("bad signature");
        }
        if p.counted.contains_key(&signer) {
            return ignored("duplicate signer");
        }
        p.counted.insert(signer, position);
        let (count, needed) = (p.counted.len(), p.expected());
        let mut out = vec![TrackerEvent::ReadyCounted {
            signer,
            position,
            count,
            needed,
        }];
        if count == needed {
            let cert = HandoverCertificate {
                old_epoch: self.epoch,
                next_config: p.ec.next.clone(),
                h: position,
                prev_cert_hash: self.prev_cert_hash,
            };
            self.cert = Some(cert.clone());
            out.push(TrackerEvent::Handover { cert });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DoneOutcome {
    Counted {
        count: usize,
        quorum: bool,
    },
    /// Valid signature by an old member, but over a certificate other than
    /// the expected one.
    Mismatch {
        cert_hash: Hash,
    },
    Ignored {
        reason: &'static str,
    },
}

/// Counts Done transactions in a new epoch's inner log.
///
/// Tallies are kept per certificate digest; only the tally of the
/// certificate this replica derived itself can activate or halt anything.
#[derive(Debug, Clone)]
pub struct DoneTally {
    old_config: EpochConfig,
    expected: Option<Hash>,
    tallies: BTreeMap<Hash, BTreeMap<ReplicaId, Done>>,
}

impl DoneTally {
    pub fn new(old_config: EpochConfig) -> Self {
        DoneTally {
            old_config,
            expected: None,
            tallies: BTreeMap::new(),
        }
    }

    pub fn quorum(&self) -> usize {
        self.old_config.attest_quorum()
    }

    pub fn set_expected(&mut self, cert: &HandoverCertificate) {
        self.expected = Some(cert.digest());
    }

    pub fn expected(&self) -> Option<Hash> {
        self.expected
    }

    pub fn on_done(&mut self, d: &Done) -> DoneOutcome {
        if d.cert.old_epoch != self.old_config.epoch {
            return DoneOutcome::Ignored {
                reason: "certificate for another epoch",
            };
        }
        if !self.old_config.contains(&d.signer) {
            return DoneOutcome::Ignored {
                reason: "signer not in old configuration",
            };
        }
        if !d.verify() {
            return DoneOutcome::Ignored {
                reason: "bad signature",
            };
        }
        let h = d.cert.digest();
        let tally = self.tallies.entry(h).or_default();
        if tally.contains_key(&d.signer) {
            return DoneOutcome::Ignored {
                reason: "duplicate signer",
            };
        }
        tally.insert(d.signer, d.clone());
        match self.expected {
            Some(e) if e != h => DoneOutcome::Mismatch { cert_hash: h },
            _ => {
                let count = tally.len();
                DoneOutcome::Counted {
                    count,
                    quorum: self.expected == Some(h) && count >= self.quorum(),
                }
            }
        }
    }

    /// Distinct valid signers over the expected certificate.
    pub fn matching(&self) -> Vec<&Done> {
        self.expected
            .and_then(|e| self.tallies.get(&e))
            .map(|t| t.values().collect())
            .unwrap_or_default()
    }

    pub fn reached(&self) -> bool {
        self.matching().len() >= self.quorum()
    }

    pub fn signers(&self) -> BTreeSet<ReplicaId> {
        self.matching().iter().map(|d| d.signer).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClientId, ConsensusKind, FaultModel, Ready, ReadyBody, Transaction};

    fn config(epoch: u64, n: u32) -> EpochConfig {
        EpochConfig::with_indices(
            EpochId(epoch),
            1..=n,
            1,
            FaultModel::Byzantine,
            ConsensusKind::Sequencer,
        )
    }

    fn sys(epoch: u64, position: u64, tx: SystemTx) -> InnerLogEntry {
        InnerLogEntry {
            epoch: EpochId(epoch),
            position,
            content: EntryContent::system(tx),
        }
    }

    fn ready(ec: &EpochChange, signer: ReplicaId) -> SystemTx {
        let body = ReadyBody {
            from: ec.from,
            to: ec.next.epoch,
            ec_hash: ec.digest(),
            signer,
        };
        SystemTx::Ready(Ready::sign(body, &signer.signing_key()))
    }

    fn ec(next: u64) -> EpochChange {
        EpochChange {
            from: EpochId(1),
            next: config(next, 4),
        }
    }

    #[test]
    fn handover_at_last_ready() {
        let mut t = HandoverTracker::new(EpochId(1), Hash::ZERO);
        let e = ec(2);
        let ev = t.on_entry(&sys(1, 3, SystemTx::EpochChange(e.clone())));
        assert!(matches!(
            ev[0],
            TrackerEvent::EpochChange {
                position: 3,
                preempted: None,
                ..
            }
        ));
        assert_eq!(t.pending().unwrap().expected(), 4);
        let mut pos = 4;
        for m in e.next.members.clone() {
            pos += 1;
            t.on_entry(&sys(1, pos, ready(&e, m)));
        }
        assert_eq!(t.cert().unwrap().h, 8);
    }

    #[test]
    fn duplicate_and_stale_ready_ignored() {
        let mut t = HandoverTracker::new(EpochId(1), Hash::ZERO);
        let e = ec(2);
        t.on_entry(&sys(1, 1, SystemTx::EpochChange(e.clone())));
        let m = e.next.members[0];
        t.on_entry(&sys(1, 2, ready(&e, m)));
        let ev = t.on_entry(&sys(1, 3, ready(&e, m)));
        assert!(
            matches!(&ev[0], TrackerEvent::ReadyIgnored { reason, .. } if reason == "duplicate signer")
        );
        let ev = t.on_entry(&sys(1, 4, ready(&ec(5), e.next.members[1])));
        assert!(
            matches!(&ev[0], TrackerEvent::ReadyIgnored { reason, .. } if reason == "stale epoch change")
        );
        assert_eq!(t.pending().unwrap().counted.len(), 1);
    }

    #[test]
    fn invalid_config_is_ignored() {
        let mut t = HandoverTracker::new(EpochId(1), Hash::ZERO);
        let bad = EpochChange {
            from: EpochId(1),
            next: config(2, 3),
        };
        let ev = t.on_entry(&sys(1, 1, SystemTx::EpochChange(bad)));
        assert!(
            matches!(&ev[0], TrackerEvent::EpochChangeIgnored { reason, .. } if reason.contains("3 < 3f+1"))
        );
        assert!(t.pending().is_none());
    }

    #[test]
    fn preemption_replaces_pending() {
        let mut t = HandoverTracker::new(EpochId(1), Hash::ZERO);
        let (a, b) = (ec(2), ec(3));
        t.on_entry(&sys(1, 1, SystemTx::EpochChange(a.clone())));
        t.on_entry(&sys(1, 2, ready(&a, a.next.members[0])));
        t.on_entry(&sys(1, 3, ready(&a, a.next.members[1])));
        let ev = t.on_entry(&sys(1, 4, SystemTx::EpochChange(b.clone())));
        assert!(matches!(
            ev[0],
            TrackerEvent::EpochChange {
                preempted: Some(EpochId(2)),
                ..
            }
        ));
        let ev = t.on_entry(&sys(1, 5, ready(&a, a.next.members[2])));
        assert!(matches!(&ev[0], TrackerEvent::ReadyIgnored { .. }));
        assert!(t.pending().unwrap().counted.is_empty());
    }

    #[test]
    fn entries_after_handover_have_no_effect() {
        let mut t = HandoverTracker::new(EpochId(1), Hash::ZERO);
        let e = ec(2);
        t.on_entry(&sys(1, 1, SystemTx::EpochChange(e.clone())));
        for (i, m) in e.next.members.clone().into_iter().enumerate() {
            t.on_entry(&sys(1, 2 + i as u64, ready(&e, m)));
        }
        let late = t.on_entry(&sys(1, 6, SystemTx::EpochChange(ec(3))));
        assert!(late.is_empty());
        assert_eq!(t.cert().unwrap().next_config.epoch, EpochId(2));
        let client = InnerLogEntry {
            epoch: EpochId(1),
            position: 7,
            content: EntryContent::client(Transaction::new(b"x".to_vec(), ClientId(0))),
        };
        assert!(t.on_entry(&client).is_empty());
    }

    #[test]
    fn done_quorum_needs_matching_certs() {
        let old = config(1, 4);
        let cert = HandoverCertificate {
            old_epoch: EpochId(1),
            next_config: config(2, 4),
            h: 9,
            prev_cert_hash: Hash::ZERO,
        };
        let mut other = cert.clone();
        other.h = 10;
        let mut tally = DoneTally::new(old.clone());
        tally.set_expected(&cert);
        let done =
            |c: &HandoverCertificate, m: ReplicaId| Done::sign(c.clone(), m, &m.signing_key());
        assert_eq!(
            tally.on_done(&done(&cert, old.members[0])),
            DoneOutcome::Counted {
                count: 1,
                quorum: false
            }
        );
        assert!(matches!(
            tally.on_done(&done(&other, old.members[1])),
            DoneOutcome::Mismatch { .. }
        ));
        assert!(!tally.reached());
        assert_eq!(
            tally.on_done(&done(&cert, old.members[0])),
            DoneOutcome::Ignored {
                reason: "duplicate signer"
            }
        );
        let outsider = ReplicaId::derived(EpochId(1), 9);
        assert!(matches!(
            tally.on_done(&done(&cert, outsider)),
            DoneOutcome::Ignored { .. }
        ));
        assert_eq!(
            tally.on_done(&done(&cert, old.members[2])),
            DoneOutcome::Counted {
                count: 2,
                quorum: true
            }
        );
        assert!(tally.reached());
    }

    #[test]
    fn done_tally_before_expected_is_known() {
        let old = config(1, 4);
        let cert = HandoverCertificate {
            old_epoch: EpochId(1),
            next_config: config(2, 4),
            h: 9,
            prev_cert_hash: Hash::ZERO,
        };
        let mut tally = DoneTally::new(old.clone());
        for m in &old.members[..2] {
            tally.on_done(&Done::sign(cert.clone(), *m, &m.signing_key()));
        }
        assert!(!tally.reached());
        tally.set_expected(&cert);
        assert!(tally.reached());
    }

    #[test]
    fn phase_order() {
        assert!(Phase::AwaitingReady.can_follow(Phase::Idle));
        assert!(!Phase::Active.can_follow(Phase::AwaitingReady));
        assert!(!Phase::HandoverFormed.can_follow(Phase::Idle));
    }
}
