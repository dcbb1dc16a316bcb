//! One replica `R(epoch, index)` inside the simulator.

use std::collections::BTreeMap;

use super::learner::{Learner, FETCH_BATCH};
use super::scenario::{ReplicaRef, Timing};
use super::trace::{Cursor, Record};
use crate::consensus::{ConsensusMsg, ConsensusPort, ConsensusReplica, ConsensusTimer, Effect};
use crate::engine::sync::SyncStep;
use crate::engine::{
    verify_trust_chain, ChainLink, DoneOutcome, DoneTally, HandoverTracker, Phase, Role, Snapshot,
    SyncCollector, TrackerEvent,
};
use crate::kv::KvStore;
use crate::model::codec::Encode;
use crate::model::{
    hash_bytes, Done, EntryContent, EpochChange, EpochConfig, EpochId, ExvalPolicy, GenesisRecord,
    HandoverCertificate, Hash, InnerLogEntry, OuterEntry, Ready, ReadyBody, ReplicaId, SourcePos,
    SystemTx, Transaction,
};
use crate::sanitizer::SanitizerState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetMsg {
    Consensus {
        epoch: EpochId,
        msg: ConsensusMsg,
    },
    ClientTx {
        tx: Transaction,
    },
    Submit {
        tx: SystemTx,
    },
    SyncRequest {
        ec_hash: Hash,
    },
    SyncResponse {
        ec_hash: Hash,
        snapshot: Box<Snapshot>,
    },
    FetchLog {
        epoch: EpochId,
        from: u64,
    },
    LogEntries {
        epoch: EpochId,
        start: u64,
        entries: Vec<EntryContent>,
    },
}

impl NetMsg {
    pub fn kind(&self) -> String {
        match self {
            NetMsg::Consensus { msg, .. } => msg.kind().to_string(),
            NetMsg::ClientTx { .. } => "client_tx".into(),
            NetMsg::Submit {
                tx: SystemTx::EpochChange(_),
            } => "submit.epoch_change".into(),
            NetMsg::Submit {
                tx: SystemTx::Ready(_),
            } => "submit.ready".into(),
            NetMsg::Submit {
                tx: SystemTx::Done(_),
            } => "submit.done".into(),
            NetMsg::SyncRequest { .. } => "sync_request".into(),
            NetMsg::SyncResponse { .. } => "sync_response".into(),
            NetMsg::FetchLog { .. } => "fetch_log".into(),
            NetMsg::LogEntries { .. } => "log_entries".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTimer {
    Consensus(ConsensusTimer),
    SyncRetry,
    ReadyResend,
    DoneResend,
    FetchOld,
    FetchNext,
}

#[derive(Debug, Clone, Default)]
pub struct NodeFaults {
    pub equivocate_done: bool,
    pub tamper_sync: bool,
    pub crash_after_ready: bool,
    pub exval_override: Option<ExvalPolicy>,
}

/// Outputs of one step of a node.
#[derive(Debug, Default)]
pub struct Ctx {
    pub now: u64,
    pub sends: Vec<(ReplicaRef, NetMsg)>,
    pub timers: Vec<(u64, NodeTimer)>,
    pub records: Vec<Record>,
    /// The node asked to be crashed now (deferred crash fault).
    pub crash_now: bool,
}

impl Ctx {
    pub fn new(now: u64) -> Self {
        Ctx {
            now,
            ..Ctx::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Incoming {
    old: EpochConfig,
    ec_hash: Hash,
    collector: SyncCollector,
    synced: bool,
    tracker: Option<HandoverTracker>,
    learner: Option<Learner>,
    cert: Option<HandoverCertificate>,
    tally: DoneTally,
    ready: Option<Ready>,
    ready_seen: bool,
    ready_rot: usize,
}

#[derive(Debug, Clone)]
struct Outgoing {
    next: EpochConfig,
    done: Done,
    tally: DoneTally,
    learner: Learner,
    done_seen: bool,
    done_rot: usize,
    finished: bool,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: ReplicaId,
    pub rref: ReplicaRef,
    pub slot: usize,
    pub config: EpochConfig,
    genesis: GenesisRecord,
    genesis_hash: Hash,
    timing: Timing,
    exval: ExvalPolicy,
    pub faults: NodeFaults,
    pub crashed: bool,
    pub byzantine: bool,
    pub consensus: ConsensusReplica,
    pub phase: Phase,
    role: Role,
    pub sanitizer: Option<SanitizerState>,
    pub outer: Vec<OuterEntry>,
    pub kv: KvStore,
    chain: Vec<ChainLink>,
    own_log: Vec<InnerLogEntry>,
    consumed: usize,
    own_tracker: Option<HandoverTracker>,
    snapshots: BTreeMap<Hash, Snapshot>,
    sync_waiting: Vec<(ReplicaRef, Hash)>,
    incoming: Option<Incoming>,
    outgoing: Option<Outgoing>,
}

impl Node {
    pub fn new(
        config: &EpochConfig,
        slot: usize,
        genesis: &GenesisRecord,
        timing: Timing,
        exval: ExvalPolicy,
        faults: NodeFaults,
    ) -> Self {
        let id = config.members[slot];
        let genesis_hash = genesis.digest();
        let is_genesis = config.epoch == genesis.config.epoch;
        let exval = faults.exval_override.clone().unwrap_or(exval);
        let mut consensus = ConsensusReplica::new(config, slot, timing.consensus);
        if is_genesis {
            consensus.start(&mut Vec::new());
        }
        Node {
            id,
            rref: ReplicaRef::of(&id),
            slot,
            config: config.clone(),
            genesis: genesis.clone(),
            genesis_hash,
            timing,
            exval: exval.clone(),
            faults,
            crashed: false,
            byzantine: false,
            consensus,
            phase: if is_genesis {
                Phase::Active
            } else {
                Phase::Idle
            },
            role: if is_genesis {
                Role::Outgoing
            } else {
                Role::Incoming
            },
            sanitizer: is_genesis.then(|| SanitizerState::new(config.epoch, exval)),
            outer: Vec::new(),
            kv: KvStore::default(),
            chain: Vec::new(),
            own_log: Vec::new(),
            consumed: 0,
            own_tracker: is_genesis.then(|| HandoverTracker::new(config.epoch, genesis_hash)),
            snapshots: BTreeMap::new(),
            sync_waiting: Vec::new(),
            incoming: None,
            outgoing: None,
        }
    }

    pub fn epoch(&self) -> EpochId {
        self.config.epoch
    }

    pub fn is_active_member(&self) -> bool {
        self.own_tracker.is_some()
    }

    pub fn own_log(&self) -> &[InnerLogEntry] {
        &self.own_log
    }

    /// Willing to order client transactions in its own epoch.
    pub fn accepts_clients(&self) -> bool {
        self.own_tracker.is_some() && !self.consensus.is_halted()
    }

    pub fn cursor(&self) -> Cursor {
        let mut lines = String::new();
        for e in &self.outer {
            lines.push_str(&e.export_line());
            lines.push('\n');
        }
        Cursor {
            replica: self.rref,
            crashed: self.crashed,
            byzantine: self.byzantine,
            phase: self.phase,
            epoch: self.sanitizer.as_ref().map(|s| s.current_epoch()),
            ingested: self.sanitizer.as_ref().map_or(0, |s| s.ingested()),
            outer_len: self.outer.len() as u64,
            outer_digest: hash_bytes(lines.as_bytes()),
            kv_digest: self.kv.digest(),
        }
    }

    fn member_ref(config: &EpochConfig, slot: usize) -> ReplicaRef {
        ReplicaRef::of(&config.members[slot])
    }

    fn slot_in(config: &EpochConfig, r: ReplicaRef) -> Option<usize> {
        if r.0 != config.epoch.0 {
            return None;
        }
        config.members.iter().position(|m| m.index == r.1)
    }

    fn set_phase(&mut self, to: Phase, role: Role, ctx: &mut Ctx) {
        let from = self.phase;
        self.phase = to;
        self.role = role;
        ctx.records.push(Record::Phase {
            t: ctx.now,
            r: self.rref,
            role,
            from,
            to,
        });
    }

    fn violation(&self, message: String, ctx: &mut Ctx) {
        ctx.records.push(Record::Violation {
            t: ctx.now,
            r: self.rref,
            message,
        });
    }

    // ---- consensus plumbing -------------------------------------------------

    fn drive(&mut self, fx: Vec<Effect>, ctx: &mut Ctx) {
        for e in fx {
            match e {
                Effect::Send { to, msg } => {
                    let dst = Self::member_ref(&self.config, to);
                    ctx.sends.push((
                        dst,
                        NetMsg::Consensus {
                            epoch: self.config.epoch,
                            msg,
                        },
                    ));
                }
                Effect::SetTimer { after, timer } => {
                    ctx.timers.push((after, NodeTimer::Consensus(timer)))
                }
                Effect::Committed { position } => ctx.records.push(Record::InternalCommit {
                    t: ctx.now,
                    r: self.rref,
                    epoch: self.config.epoch,
                    pos: position,
                }),
            }
        }
        let mut released = Vec::new();
        while let Some(e) = self.consensus.poll_decided() {
            released.push(e);
        }
        for e in released {
            self.on_released(e, ctx);
        }
    }

    fn propose(&mut self, content: EntryContent, ctx: &mut Ctx) {
        let mut fx = Vec::new();
        if self.consensus.propose(content, &mut fx).is_ok() {
            self.drive(fx, ctx);
        }
    }

    fn on_released(&mut self, entry: InnerLogEntry, ctx: &mut Ctx) {
        ctx.records.push(Record::InnerEntry {
            t: ctx.now,
            epoch: entry.epoch,
            pos: entry.position,
            content: entry.content.clone(),
        });
        ctx.records.push(Record::InnerRelease {
            t: ctx.now,
            r: self.rref,
            epoch: entry.epoch,
            pos: entry.position,
            digest: entry.content.digest(),
        });
        self.own_log.push(entry.clone());
        if self.own_tracker.is_none() {
            if let EntryContent::System {
                tx: SystemTx::Done(d),
            } = &entry.content
            {
                self.incoming_done(d, entry.position, ctx);
            }
        }
        self.consume_own(ctx);
    }

    // ---- sanitizer ------------------------------------------------------------

    fn emit(&mut self, e: OuterEntry, adopted: bool, ctx: &mut Ctx) {
        ctx.records.push(Record::Emit {
            t: ctx.now,
            r: self.rref,
            outer: e.outer_position,
            tx: e.tx.id,
            src_epoch: e.source.epoch,
            src_pos: e.source.position,
            adopted,
        });
        self.kv.apply(&e.tx);
        self.outer.push(e);
    }

    fn sanitize(&mut self, entry: &InnerLogEntry, ctx: &mut Ctx) {
        let Some(s) = self.sanitizer.as_mut() else {
            return;
        };
        let before = s.current_epoch();
        match s.ingest(entry) {
            Ok(Some(o)) => self.emit(o, false, ctx),
            Ok(None) => {}
            Err(e) => self.violation(format!("sanitizer: {e}"), ctx),
        }
        self.marker_if_moved(before, ctx);
    }

    fn handover_sanitizer(&mut self, cert: &HandoverCertificate, ctx: &mut Ctx) {
        let Some(s) = self.sanitizer.as_mut() else {
            return;
        };
        let before = s.current_epoch();
        if let Err(e) = s.apply_handover(cert) {
            self.violation(format!("sanitizer: {e}"), ctx);
        }
        self.marker_if_moved(before, ctx);
    }

    fn marker_if_moved(&mut self, before: EpochId, ctx: &mut Ctx) {
        let now = self.sanitizer.as_ref().map(|s| s.current_epoch());
        if let Some(epoch) = now.filter(|&e| e != before) {
            ctx.records.push(Record::EpochMarker {
                t: ctx.now,
                r: self.rref,
                epoch,
            });
        }
    }

    // ---- own epoch (outgoing role) ------------------------------------------

    fn consume_own(&mut self, ctx: &mut Ctx) {
        if self.own_tracker.is_none() {
            return;
        }
        while self.consumed < self.own_log.len() {
            if self
                .own_tracker
                .as_ref()
                .is_some_and(|t| t.cert().is_some())
            {
                return;
            }
            let entry = self.own_log[self.consumed].clone();
            self.consumed += 1;
            self.sanitize(&entry, ctx);
            let events = self.own_tracker.as_mut().expect("active").on_entry(&entry);
            for ev in events {
                self.own_event(ev, ctx);
            }
        }
    }

    fn own_event(&mut self, ev: TrackerEvent, ctx: &mut Ctx) {
        let t = ctx.now;
        let r = self.rref;
        let epoch = self.config.epoch;
        match ev {
            TrackerEvent::EpochChange {
                ec,
                position,
                preempted,
            } => {
                ctx.records.push(Record::EpochChangeSeen {
                    t,
                    r,
                    epoch,
                    pos: position,
                    next: ec.next.epoch,
                    preempted,
                });
                self.set_phase(Phase::AwaitingReady, Role::Outgoing, ctx);
                let snap = Snapshot {
                    epoch,
                    ec_pos: position,
                    ec: ec.clone(),
                    outer_prefix: self.outer.clone(),
                    chain: self.chain.clone(),
                };
                let h = ec.digest();
                self.snapshots.insert(h, snap);
                let waiting = std::mem::take(&mut self.sync_waiting);
                for (who, want) in waiting {
                    if want == h {
                        self.answer_sync(who, h, ctx);
                    } else {
                        self.sync_waiting.push((who, want));
                    }
                }
            }
            TrackerEvent::EpochChangeIgnored { position, reason } => {
                ctx.records.push(Record::EpochChangeIgnored {
                    t,
                    r,
                    epoch,
                    pos: position,
                    reason,
                });
            }
            TrackerEvent::ReadyCounted {
                signer, position, ..
            } => ctx.records.push(Record::ReadySeen {
                t,
                r,
                signer: ReplicaRef::of(&signer),
                epoch,
                pos: position,
                counted: true,
                note: String::new(),
            }),
            TrackerEvent::ReadyIgnored {
                signer,
                position,
                reason,
            } => ctx.records.push(Record::ReadySeen {
                t,
                r,
                signer: ReplicaRef::of(&signer),
                epoch,
                pos: position,
                counted: false,
                note: reason,
            }),
            TrackerEvent::Handover { cert } => self.outgoing_handover(cert, ctx),
        }
    }

    fn outgoing_handover(&mut self, cert: HandoverCertificate, ctx: &mut Ctx) {
        ctx.records.push(Record::Certificate {
            t: ctx.now,
            r: self.rref,
            hash: cert.digest(),
            cert: cert.clone(),
        });
        self.handover_sanitizer(&cert, ctx);
        self.set_phase(Phase::HandoverFormed, Role::Outgoing, ctx);
        let signed = if self.faults.equivocate_done {
            let mut forged = cert.clone();
            forged.h += 1;
            ctx.records.push(Record::Fault {
                t: ctx.now,
                r: self.rref,
                kind: "equivocate_done".into(),
                detail: format!("signs h={} instead of h={}", forged.h, cert.h),
            });
            forged
        } else {
            cert.clone()
        };
        let done = Done::sign(signed, self.id, &self.id.signing_key());
        let next = cert.next_config.clone();
        let mut tally = DoneTally::new(self.config.clone());
        tally.set_expected(&cert);
        let learner = Learner::new(
            &next,
            1,
            self.timing.fetch_interval,
            self.timing.fetch_backoff_cap,
        );
        self.outgoing = Some(Outgoing {
            next,
            done,
            tally,
            learner,
            done_seen: false,
            done_rot: self.slot,
            finished: false,
        });
        self.send_done(ctx);
        ctx.records.push(Record::DoneSubmitted {
            t: ctx.now,
            r: self.rref,
            cert_hash: self.outgoing.as_ref().expect("set").done.cert.digest(),
        });
        self.set_phase(Phase::AwaitingDone, Role::Outgoing, ctx);
        ctx.timers
            .push((self.timing.done_resend, NodeTimer::DoneResend));
        ctx.timers
            .push((self.timing.fetch_interval, NodeTimer::FetchNext));
    }

    fn send_done(&mut self, ctx: &mut Ctx) {
        let Some(o) = self.outgoing.as_mut() else {
            return;
        };
        let k = o.next.attest_quorum();
        let n = o.next.n();
        for i in 0..k {
            let dst = Self::member_ref(&o.next, (o.done_rot + i) % n);
            ctx.sends.push((
                dst,
                NetMsg::Submit {
                    tx: SystemTx::Done(o.done.clone()),
                },
            ));
        }
        o.done_rot = (o.done_rot + k) % n;
    }

    fn outgoing_learned(&mut self, entries: Vec<InnerLogEntry>, ctx: &mut Ctx) {
        for e in entries {
            let Some(o) = self.outgoing.as_mut() else {
                return;
            };
            if o.finished {
                return;
            }
            let EntryContent::System {
                tx: SystemTx::Done(d),
            } = &e.content
            else {
                continue;
            };
            if d.signer == self.id {
                o.done_seen = true;
            }
            let outcome = o.tally.on_done(d);
            let quorum = matches!(outcome, DoneOutcome::Counted { quorum: true, .. });
            ctx.records.push(Record::DoneSeen {
                t: ctx.now,
                r: self.rref,
                signer: ReplicaRef::of(&d.signer),
                epoch: e.epoch,
                pos: e.position,
                cert_hash: d.cert.digest(),
                outcome: outcome_label(&outcome),
            });
            if quorum {
                o.finished = true;
                o.learner.stop();
                self.consensus.halt();
                ctx.records.push(Record::Halt {
                    t: ctx.now,
                    r: self.rref,
                    epoch: self.config.epoch,
                    at_pos: e.position,
                });
                self.set_phase(Phase::ShutDown, Role::Outgoing, ctx);
                return;
            }
        }
    }

    // ---- sync service -----------------------------------------------------------

    fn answer_sync(&mut self, who: ReplicaRef, ec_hash: Hash, ctx: &mut Ctx) {
        let Some(snap) = self.snapshots.get(&ec_hash) else {
            return;
        };
        let mut snap = snap.clone();
        if self.faults.tamper_sync {
            if let Some(last) = snap.outer_prefix.last_mut() {
                last.source.position += 1000;
            } else {
                snap.ec_pos += 1;
            }
            ctx.records.push(Record::Fault {
                t: ctx.now,
                r: self.rref,
                kind: "tamper_sync".into(),
                detail: format!("corrupted snapshot sent to {who}"),
            });
        }
        ctx.sends.push((
            who,
            NetMsg::SyncResponse {
                ec_hash,
                snapshot: Box::new(snap),
            },
        ));
    }

    // ---- incoming role --------------------------------------------------------

    /// The harness tells an incoming member that an EpochChange naming it was
    /// submitted to `old`. Stands in for the out-of-band signal a governance
    /// process would give.
    pub fn bootstrap(&mut self, ec: &EpochChange, old: &EpochConfig, ctx: &mut Ctx) {
        if self.phase != Phase::Idle || self.crashed {
            return;
        }
        let mut collector = SyncCollector::new(old, self.slot);
        let ec_hash = ec.digest();
        let targets = collector.initial_targets();
        self.incoming = Some(Incoming {
            old: old.clone(),
            ec_hash,
            collector,
            synced: false,
            tracker: None,
            learner: None,
            cert: None,
            tally: DoneTally::new(old.clone()),
            ready: None,
            ready_seen: false,
            ready_rot: self.slot,
        });
        self.set_phase(Phase::AwaitingReady, Role::Incoming, ctx);
        for t in targets {
            ctx.sends
                .push((Self::member_ref(old, t), NetMsg::SyncRequest { ec_hash }));
        }
        ctx.timers
            .push((self.timing.sync_retry, NodeTimer::SyncRetry));
    }

    fn on_sync_response(
        &mut self,
        from: ReplicaRef,
        ec_hash: Hash,
        snapshot: Snapshot,
        ctx: &mut Ctx,
    ) {
        let Some(inc) = self.incoming.as_mut() else {
            return;
        };
        if inc.synced || self.phase == Phase::Aborted || ec_hash != inc.ec_hash {
            return;
        }
        let Some(slot) = Self::slot_in(&inc.old, from) else {
            return;
        };
        match inc.collector.on_response(slot, snapshot) {
            SyncStep::Complete(s) => self.complete_sync(*s, ctx),
            SyncStep::Widen(targets) => {
                let old = inc.old.clone();
                for t in targets {
                    ctx.sends
                        .push((Self::member_ref(&old, t), NetMsg::SyncRequest { ec_hash }));
                }
            }
            SyncStep::Wait => {}
        }
    }

    fn complete_sync(&mut self, snap: Snapshot, ctx: &mut Ctx) {
        let inc = self.incoming.as_mut().expect("incoming");
        let chain_ok = verify_trust_chain(&snap.chain, &self.genesis).is_ok()
            && snap
                .chain
                .last()
                .map_or(self.genesis.config.epoch, |l| l.cert.next_config.epoch)
                == inc.old.epoch;
        if snap.ec.digest() != inc.ec_hash || snap.epoch != inc.old.epoch || !chain_ok {
            let msg = format!(
                "snapshot agreed by {} old members fails validation",
                inc.collector.need()
            );
            self.violation(msg, ctx);
            return;
        }
        inc.synced = true;
        let prev_old = snap
            .chain
            .last()
            .map_or(self.genesis_hash, |l| l.cert.digest());
        inc.tracker = Some(HandoverTracker::resume(
            inc.old.epoch,
            prev_old,
            snap.ec.clone(),
            snap.ec_pos,
        ));
        inc.learner = Some(Learner::new(
            &inc.old,
            snap.ec_pos + 1,
            self.timing.fetch_interval,
            self.timing.fetch_backoff_cap,
        ));
        let body = ReadyBody {
            from: inc.old.epoch,
            to: self.config.epoch,
            ec_hash: inc.ec_hash,
            signer: self.id,
        };
        inc.ready = Some(Ready::sign(body, &self.id.signing_key()));
        self.sanitizer = Some(SanitizerState::resume(
            snap.epoch,
            snap.ec_pos,
            &snap.outer_prefix,
            self.exval.clone(),
        ));
        self.chain = snap.chain.clone();
        ctx.records.push(Record::SyncComplete {
            t: ctx.now,
            r: self.rref,
            digest: snap.digest(),
            ec_pos: snap.ec_pos,
            adopted: snap.outer_prefix.len() as u64,
        });
        for e in snap.outer_prefix {
            self.emit(e, true, ctx);
        }
        let mut fx = Vec::new();
        self.consensus.start(&mut fx);
        self.drive(fx, ctx);
        self.send_ready(ctx);
        ctx.records.push(Record::ReadySubmitted {
            t: ctx.now,
            r: self.rref,
            to: self.config.epoch,
        });
        ctx.timers
            .push((self.timing.ready_resend, NodeTimer::ReadyResend));
        ctx.timers
            .push((self.timing.fetch_interval, NodeTimer::FetchOld));
        if self.faults.crash_after_ready {
            ctx.crash_now = true;
        }
    }

    fn send_ready(&mut self, ctx: &mut Ctx) {
        let Some(inc) = self.incoming.as_mut() else {
            return;
        };
        let Some(ready) = inc.ready.clone() else {
            return;
        };
        let k = inc.old.attest_quorum();
        let n = inc.old.n();
        for i in 0..k {
            let dst = Self::member_ref(&inc.old, (inc.ready_rot + i) % n);
            ctx.sends.push((
                dst,
                NetMsg::Submit {
                    tx: SystemTx::Ready(ready.clone()),
                },
            ));
        }
        inc.ready_rot = (inc.ready_rot + k) % n;
    }

    fn incoming_learned(&mut self, entries: Vec<InnerLogEntry>, ctx: &mut Ctx) {
        for e in entries {
            if self.phase == Phase::Aborted {
                return;
            }
            let done = self.incoming.as_ref().is_some_and(|i| i.cert.is_some());
            if done {
                return;
            }
            self.sanitize(&e, ctx);
            let events = self
                .incoming
                .as_mut()
                .and_then(|i| i.tracker.as_mut())
                .map(|t| t.on_entry(&e))
                .unwrap_or_default();
            for ev in events {
                self.incoming_event(ev, ctx);
            }
        }
    }

    fn incoming_event(&mut self, ev: TrackerEvent, ctx: &mut Ctx) {
        let t = ctx.now;
        let r = self.rref;
        let old_epoch = self.incoming.as_ref().expect("incoming").old.epoch;
        match ev {
            TrackerEvent::EpochChange {
                ec,
                position,
                preempted,
            } => {
                ctx.records.push(Record::EpochChangeSeen {
                    t,
                    r,
                    epoch: old_epoch,
                    pos: position,
                    next: ec.next.epoch,
                    preempted,
                });
                if preempted == Some(self.config.epoch) {
                    self.consensus.halt();
                    if let Some(l) = self.incoming.as_mut().and_then(|i| i.learner.as_mut()) {
                        l.stop();
                    }
                    self.set_phase(Phase::Aborted, Role::Incoming, ctx);
                }
            }
            TrackerEvent::EpochChangeIgnored { position, reason } => {
                ctx.records.push(Record::EpochChangeIgnored {
                    t,
                    r,
                    epoch: old_epoch,
                    pos: position,
                    reason,
                });
            }
            TrackerEvent::ReadyCounted {
                signer, position, ..
            } => {
                if signer == self.id {
                    self.incoming.as_mut().expect("incoming").ready_seen = true;
                }
                ctx.records.push(Record::ReadySeen {
                    t,
                    r,
                    signer: ReplicaRef::of(&signer),
                    epoch: old_epoch,
                    pos: position,
                    counted: true,
                    note: String::new(),
                });
            }
            TrackerEvent::ReadyIgnored {
                signer,
                position,
                reason,
            } => ctx.records.push(Record::ReadySeen {
                t,
                r,
                signer: ReplicaRef::of(&signer),
                epoch: old_epoch,
                pos: position,
                counted: false,
                note: reason,
            }),
            TrackerEvent::Handover { cert } => {
                if cert.next_config != self.config {
                    self.violation(
                        format!("handover names epoch {} instead", cert.next_config.epoch),
                        ctx,
                    );
                    return;
                }
                ctx.records.push(Record::Certificate {
                    t,
                    r,
                    hash: cert.digest(),
                    cert: cert.clone(),
                });
                self.handover_sanitizer(&cert, ctx);
                let inc = self.incoming.as_mut().expect("incoming");
                inc.tally.set_expected(&cert);
                inc.cert = Some(cert);
                if let Some(l) = inc.learner.as_mut() {
                    l.stop();
                }
                self.set_phase(Phase::HandoverFormed, Role::Incoming, ctx);
                self.set_phase(Phase::AwaitingDone, Role::Incoming, ctx);
                self.maybe_activate(ctx);
            }
        }
    }

    fn incoming_done(&mut self, d: &Done, position: u64, ctx: &mut Ctx) {
        let Some(inc) = self.incoming.as_mut() else {
            return;
        };
        let outcome = inc.tally.on_done(d);
        ctx.records.push(Record::DoneSeen {
            t: ctx.now,
            r: self.rref,
            signer: ReplicaRef::of(&d.signer),
            epoch: self.config.epoch,
            pos: position,
            cert_hash: d.cert.digest(),
            outcome: outcome_label(&outcome),
        });
        self.maybe_activate(ctx);
    }

    fn maybe_activate(&mut self, ctx: &mut Ctx) {
        if self.phase != Phase::AwaitingDone || self.own_tracker.is_some() {
            return;
        }
        let Some(inc) = self.incoming.as_ref() else {
            return;
        };
        let Some(cert) = inc.cert.clone() else { return };
        if !inc.tally.reached() {
            return;
        }
        let mut signatures: Vec<Done> = inc.tally.matching().into_iter().cloned().collect();
        signatures.truncate(inc.tally.quorum());
        let link = ChainLink {
            cert: cert.clone(),
            signatures,
        };
        if self.sanitizer.as_ref().map(|s| s.current_epoch()) != Some(self.config.epoch) {
            self.violation(
                "activation before the old epoch was consumed up to its cutoff".into(),
                ctx,
            );
        }
        self.chain.push(link.clone());
        self.set_phase(Phase::Active, Role::Incoming, ctx);
        ctx.records.push(Record::Activated {
            t: ctx.now,
            r: self.rref,
            epoch: self.config.epoch,
            at_pos: self.own_log.len() as u64,
            link,
        });
        self.own_tracker = Some(HandoverTracker::new(self.config.epoch, cert.digest()));
        self.consume_own(ctx);
    }

    // ---- inputs -----------------------------------------------------------------

    pub fn on_message(&mut self, from: ReplicaRef, msg: NetMsg, ctx: &mut Ctx) {
        match msg {
            NetMsg::Consensus { epoch, msg } => {
                if epoch != self.config.epoch {
                    return;
                }
                let Some(slot) = Self::slot_in(&self.config, from) else {
                    return;
                };
                let mut fx = Vec::new();
                self.consensus.on_message(slot, msg, &mut fx);
                self.drive(fx, ctx);
            }
            NetMsg::ClientTx { tx } => {
                if self.accepts_clients() {
                    self.propose(EntryContent::client(tx), ctx);
                }
            }
            NetMsg::Submit { tx } => self.propose(EntryContent::system(tx), ctx),
            NetMsg::SyncRequest { ec_hash } => {
                if self.snapshots.contains_key(&ec_hash) {
                    self.answer_sync(from, ec_hash, ctx);
                } else {
                    self.sync_waiting.push((from, ec_hash));
                }
            }
            NetMsg::SyncResponse { ec_hash, snapshot } => {
                self.on_sync_response(from, ec_hash, *snapshot, ctx)
            }
            NetMsg::FetchLog { epoch, from: start } => {
                if epoch != self.config.epoch || start == 0 {
                    return;
                }
                let lo = (start - 1) as usize;
                if lo >= self.own_log.len() {
                    return;
                }
                let hi = (lo + FETCH_BATCH).min(self.own_log.len());
                let entries = self.own_log[lo..hi]
                    .iter()
                    .map(|e| e.content.clone())
                    .collect();
                ctx.sends.push((
                    from,
                    NetMsg::LogEntries {
                        epoch,
                        start,
                        entries,
                    },
                ));
            }
            NetMsg::LogEntries {
                epoch,
                start,
                entries,
            } => {
                if let Some(inc) = self.incoming.as_mut() {
                    if inc.old.epoch == epoch {
                        let Some(slot) = Self::slot_in(&inc.old, from) else {
                            return;
                        };
                        let got = inc
                            .learner
                            .as_mut()
                            .map(|l| l.on_entries(slot, start, entries))
                            .unwrap_or_default();
                        self.incoming_learned(got, ctx);
                        return;
                    }
                }
                if let Some(o) = self.outgoing.as_mut() {
                    if o.next.epoch == epoch {
                        let Some(slot) = Self::slot_in(&o.next, from) else {
                            return;
                        };
                        let got = o.learner.on_entries(slot, start, entries);
                        self.outgoing_learned(got, ctx);
                    }
                }
            }
        }
    }

    pub fn submit_local(&mut self, tx: SystemTx, ctx: &mut Ctx) {
        self.propose(EntryContent::system(tx), ctx);
    }

    pub fn on_timer(&mut self, timer: NodeTimer, ctx: &mut Ctx) {
        match timer {
            NodeTimer::Consensus(t) => {
                let mut fx = Vec::new();
                self.consensus.on_timer(t, &mut fx);
                self.drive(fx, ctx);
            }
            NodeTimer::SyncRetry => {
                let Some(inc) = self.incoming.as_mut() else {
                    return;
                };
                if inc.synced || self.phase == Phase::Aborted {
                    return;
                }
                let old = inc.old.clone();
                let ec_hash = inc.ec_hash;
                for t in inc.collector.on_timeout() {
                    ctx.sends
                        .push((Self::member_ref(&old, t), NetMsg::SyncRequest { ec_hash }));
                }
                ctx.timers
                    .push((self.timing.sync_retry, NodeTimer::SyncRetry));
            }
            NodeTimer::ReadyResend => {
                let Some(inc) = self.incoming.as_ref() else {
                    return;
                };
                if inc.ready_seen || inc.cert.is_some() || self.phase == Phase::Aborted {
                    return;
                }
                self.send_ready(ctx);
                ctx.timers
                    .push((self.timing.ready_resend, NodeTimer::ReadyResend));
            }
            NodeTimer::DoneResend => {
                let Some(o) = self.outgoing.as_ref() else {
                    return;
                };
                if o.done_seen || o.finished {
                    return;
                }
                self.send_done(ctx);
                ctx.timers
                    .push((self.timing.done_resend, NodeTimer::DoneResend));
            }
            NodeTimer::FetchOld => {
                let Some(inc) = self.incoming.as_mut() else {
                    return;
                };
                let Some(l) = inc.learner.as_mut() else {
                    return;
                };
                if !l.is_active() {
                    return;
                }
                let (epoch, from) = (l.epoch(), l.next());
                let after = l.next_interval();
                for m in &inc.old.members {
                    ctx.sends
                        .push((ReplicaRef::of(m), NetMsg::FetchLog { epoch, from }));
                }
                ctx.timers.push((after, NodeTimer::FetchOld));
            }
            NodeTimer::FetchNext => {
                let Some(o) = self.outgoing.as_mut() else {
                    return;
                };
                if o.finished || !o.learner.is_active() {
                    return;
                }
                let (epoch, from) = (o.learner.epoch(), o.learner.next());
                let after = o.learner.next_interval();
                for m in &o.next.members {
                    ctx.sends
                        .push((ReplicaRef::of(m), NetMsg::FetchLog { epoch, from }));
                }
                ctx.timers.push((after, NodeTimer::FetchNext));
            }
        }
    }

    /// Inner position of the EpochChange this replica is transitioning under, if any.
    pub fn pending_source(&self) -> Option<SourcePos> {
        let t = self.own_tracker.as_ref()?;
        t.pending().map(|p| SourcePos {
            epoch: t.epoch(),
            position: p.ec_pos,
        })
    }
}

fn outcome_label(o: &DoneOutcome) -> String {
    match o {
        DoneOutcome::Counted { count, .. } => format!("counted:{count}"),
        DoneOutcome::Mismatch { .. } => "mismatch".into(),
        DoneOutcome::Ignored { reason } => format!("ignored:{reason}"),
    }
}
