//! Deterministic discrete-event simulator.
//!
//! Everything that happens is driven by one event queue ordered by
//! `(time, tiebreak, seq)` where the tiebreak comes from a ChaCha8 stream
//! seeded by the scenario. Equal seeds give byte-identical traces.

pub mod learner;
pub mod node;
pub mod random;
pub mod scenario;
pub mod trace;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::multilane::LaneMsg;
use crate::consensus::ConsensusMsg;
use crate::engine::Phase;
use crate::model::codec::Encode;
use crate::model::{
    ClientId, EpochChange, EpochConfig, EpochId, GenesisRecord, SystemTx, Transaction, TxId,
};
use node::{Ctx, NetMsg, Node, NodeFaults, NodeTimer};
pub use scenario::{
    load_scenario, parse_scenario, ReplicaRef, ResubmitPolicy, Scenario, ScheduledEvent,
};
pub use trace::{Cursor, Record, Trace, TRACE_VERSION};

#[derive(Debug)]
enum Ev {
    Deliver {
        id: u64,
        from: ReplicaRef,
        to: ReplicaRef,
        msg: NetMsg,
    },
    ClientDeliver {
        to: ReplicaRef,
        tx: Transaction,
    },
    Timer {
        r: ReplicaRef,
        timer: NodeTimer,
    },
    Submit {
        client: usize,
        attempt: u32,
    },
    ClientCheck {
        client: usize,
        attempt: u32,
    },
    InjectEc {
        from: u64,
        to: u64,
    },
    Crash {
        r: ReplicaRef,
    },
    Quiesce,
}

#[derive(Debug)]
struct ClientTx {
    tx: Transaction,
    to: Option<u32>,
    policy: ResubmitPolicy,
    timeout: u64,
    last_slot: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Window {
    from: u64,
    until: u64,
    extra: u64,
}

impl Window {
    fn covers(&self, t: u64) -> bool {
        t >= self.from && t < self.until
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64, u64)>>,
    events: HashMap<u64, Ev>,
    nodes: BTreeMap<ReplicaRef, Node>,
    configs: BTreeMap<u64, EpochConfig>,
    faulty: BTreeSet<ReplicaRef>,
    clients: Vec<ClientTx>,
    next_msg: u64,
    records: Vec<Record>,
    entries_seen: HashSet<(EpochId, u64)>,
    emitted_somewhere: HashSet<TxId>,
    newest_active: u64,
    pending_injects: usize,
    rotate: usize,
    lane_delays: Vec<(u64, usize, Window)>,
    link_delays: Vec<(ReplicaRef, ReplicaRef, Window)>,
    last_scheduled: u64,
}

/// Runs a validated scenario to quiescence or its horizon.
pub fn run(sc: &Scenario) -> Trace {
    Sim::new(sc).run()
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let configs: BTreeMap<u64, EpochConfig> =
            sc.epochs.iter().map(|e| (e.epoch, e.config())).collect();
        let genesis = GenesisRecord {
            config: sc.epochs[0].config(),
        };
        let faulty: BTreeSet<ReplicaRef> = sc
            .schedule
            .iter()
            .filter_map(ScheduledEvent::faulty_replica)
            .collect();
        let mut nodes = BTreeMap::new();
        for config in configs.values() {
            for (slot, m) in config.members.iter().enumerate() {
                let r = ReplicaRef::of(m);
                let mut faults = NodeFaults::default();
                let mut byzantine = false;
                let mut silent = false;
                for ev in &sc.schedule {
                    match ev {
                        ScheduledEvent::EquivocateDone { replica } if *replica == r => {
                            faults.equivocate_done = true;
                            byzantine = true;
                        }
                        ScheduledEvent::TamperSync { replica } if *replica == r => {
                            faults.tamper_sync = true;
                            byzantine = true;
                        }
                        ScheduledEvent::Silent { replica } if *replica == r => {
                            silent = true;
                            byzantine = true;
                        }
                        ScheduledEvent::Crash {
                            replica,
                            after_ready: true,
                            ..
                        } if *replica == r => {
                            faults.crash_after_ready = true;
                        }
                        ScheduledEvent::ExvalOverride { replica, exval } if *replica == r => {
                            faults.exval_override = Some(exval.clone());
                        }
                        _ => {}
                    }
                }
                let mut node =
                    Node::new(config, slot, &genesis, sc.timing, sc.exval.clone(), faults);
                node.byzantine = byzantine;
                node.crashed = silent;
                nodes.insert(r, node);
            }
        }
        let mut sim = Sim {
            sc,
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            events: HashMap::new(),
            nodes,
            configs,
            faulty,
            clients: Vec::new(),
            next_msg: 0,
            records: vec![Record::Header {
                trace_version: TRACE_VERSION,
                genesis_hash: genesis.digest(),
                scenario: Box::new(sc.clone()),
            }],
            entries_seen: HashSet::new(),
            emitted_somewhere: HashSet::new(),
            newest_active: sc.epochs[0].epoch,
            pending_injects: 0,
            rotate: 0,
            lane_delays: Vec::new(),
            link_delays: Vec::new(),
            last_scheduled: 0,
        };
        sim.schedule_scenario();
        sim
    }

    fn push(&mut self, at: u64, ev: Ev) {
        let seq = self.seq;
        self.seq += 1;
        let tie = self.rng.gen::<u64>();
        self.queue.push(Reverse((at, tie, seq)));
        self.events.insert(seq, ev);
    }

    fn add_client(
        &mut self,
        at: u64,
        label: String,
        to: Option<u32>,
        policy: ResubmitPolicy,
        timeout: u64,
    ) {
        let k = self.clients.len();
        let tx = Transaction::new(label.into_bytes(), ClientId(k as u32));
        self.clients.push(ClientTx {
            tx,
            to,
            policy,
            timeout,
            last_slot: None,
        });
        self.push(
            at,
            Ev::Submit {
                client: k,
                attempt: 1,
            },
        );
    }

    fn schedule_scenario(&mut self) {
        let sc = self.sc;
        for ev in &sc.schedule {
            self.last_scheduled = self.last_scheduled.max(ev.time());
            match ev {
                ScheduledEvent::Client {
                    at,
                    txs,
                    spacing,
                    to,
                    resubmit,
                    resubmit_timeout,
                } => {
                    let timeout = resubmit_timeout.unwrap_or(sc.timing.resubmit_timeout);
                    for (i, label) in txs.iter().enumerate() {
                        self.add_client(
                            at + spacing * i as u64,
                            label.clone(),
                            *to,
                            *resubmit,
                            timeout,
                        );
                    }
                }
                ScheduledEvent::Workload {
                    at,
                    until,
                    interval,
                    prefix,
                } => {
                    let mut t = *at;
                    let mut k = 0;
                    while t < *until {
                        let label = format!("{prefix}-{k}");
                        self.add_client(
                            t,
                            label,
                            None,
                            ResubmitPolicy::Timeout,
                            sc.timing.resubmit_timeout,
                        );
                        t += (*interval).max(1);
                        k += 1;
                    }
                }
                ScheduledEvent::EpochChange { at, from, to } => {
                    self.pending_injects += 1;
                    self.push(
                        *at,
                        Ev::InjectEc {
                            from: *from,
                            to: *to,
                        },
                    );
                }
                ScheduledEvent::Crash {
                    at,
                    replica,
                    after_ready,
                } => {
                    if !after_ready {
                        self.push(*at, Ev::Crash { r: *replica });
                    }
                }
                ScheduledEvent::DelayLane {
                    at,
                    epoch,
                    lane,
                    extra,
                    until,
                } => {
                    let w = Window {
                        from: *at,
                        until: until.unwrap_or(u64::MAX),
                        extra: *extra,
                    };
                    if let Some(slot) = self.configs[epoch]
                        .members
                        .iter()
                        .position(|m| m.index == *lane)
                    {
                        self.lane_delays.push((*epoch, slot, w));
                    }
                }
                ScheduledEvent::DelayLink {
                    at,
                    from,
                    to,
                    extra,
                    until,
                } => {
                    let w = Window {
                        from: *at,
                        until: until.unwrap_or(u64::MAX),
                        extra: *extra,
                    };
                    self.link_delays.push((*from, *to, w));
                }
                ScheduledEvent::Silent { .. }
                | ScheduledEvent::EquivocateDone { .. }
                | ScheduledEvent::TamperSync { .. }
                | ScheduledEvent::ExvalOverride { .. } => {}
            }
        }
        self.push(sc.timing.quiescence_interval, Ev::Quiesce);
    }

    fn run(mut self) -> Trace {
        let horizon = self.sc.horizon;
        let mut reason = "horizon";
        while let Some(Reverse((at, _, seq))) = self.queue.pop() {
            if at > horizon {
                break;
            }
            self.now = at;
            let ev = self.events.remove(&seq).expect("event stored");
            if let Ev::Quiesce = ev {
                if self.quiescent() {
                    reason = "quiescent";
                    break;
                }
                self.push(at + self.sc.timing.quiescence_interval, Ev::Quiesce);
                continue;
            }
            self.handle(ev);
        }
        if reason == "horizon" {
            self.now = self.now.max(horizon).min(horizon);
        }
        let cursors = self.nodes.values().map(Node::cursor).collect();
        self.records.push(Record::End {
            t: self.now,
            reason: reason.into(),
            cursors,
        });
        Trace {
            records: self.records,
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Deliver { id, from, to, msg } => {
                let crashed = self.nodes.get(&to).is_none_or(|n| n.crashed);
                if crashed {
                    if self.sc.trace_messages {
                        self.records.push(Record::Drop {
                            t: self.now,
                            id,
                            reason: "receiver crashed".into(),
                        });
                    }
                    return;
                }
                if self.sc.trace_messages {
                    self.records.push(Record::Deliver { t: self.now, id });
                }
                self.with_node(to, |n, ctx| n.on_message(from, msg, ctx));
            }
            Ev::ClientDeliver { to, tx } => {
                if self.nodes.get(&to).is_some_and(|n| !n.crashed) {
                    self.with_node(to, |n, ctx| n.on_message(to, NetMsg::ClientTx { tx }, ctx));
                }
            }
            Ev::Timer { r, timer } => {
                if self.nodes.get(&r).is_some_and(|n| !n.crashed) {
                    self.with_node(r, |n, ctx| n.on_timer(timer, ctx));
                }
            }
            Ev::Submit { client, attempt } => self.submit(client, attempt),
            Ev::ClientCheck { client, attempt } => {
                let c = &self.clients[client];
                // A rejected transaction is ordered and dropped; its client gets no outer-log entry to wait for.
                let owed = c.policy == ResubmitPolicy::Timeout && self.sc.exval.accepts(&c.tx);
                if owed && !self.emitted_somewhere.contains(&c.tx.id) {
                    self.submit(client, attempt + 1);
                }
            }
            Ev::InjectEc { from, to } => self.inject_ec(from, to),
            Ev::Crash { r } => self.crash(r),
            Ev::Quiesce => unreachable!("handled in run"),
        }
    }

    fn submit(&mut self, client: usize, attempt: u32) {
        let config = &self.configs[&self.newest_active];
        let c = &self.clients[client];
        let fixed =
            c.to.and_then(|i| config.members.iter().position(|m| m.index == i));
        // Retries move on to the next member, so a crashed target is not hit twice in a row.
        let slot = match (fixed, c.last_slot) {
            (Some(s), _) if attempt == 1 => s,
            (_, Some(prev)) => (prev + 1) % config.n(),
            _ => {
                self.rotate += 1;
                self.rotate % config.n()
            }
        };
        self.clients[client].last_slot = Some(slot);
        let c = &self.clients[client];
        let to = ReplicaRef::of(&config.members[slot]);
        let tx = c.tx.clone();
        let timeout = c.timeout;
        self.records.push(Record::ClientSubmit {
            t: self.now,
            tx: tx.id,
            label: tx.label(),
            to,
            attempt,
            abandon_on_loss: c.policy == ResubmitPolicy::Never,
        });
        let due = self.now + self.latency();
        self.push(due, Ev::ClientDeliver { to, tx });
        self.push(self.now + timeout, Ev::ClientCheck { client, attempt });
    }

    fn inject_ec(&mut self, from: u64, to: u64) {
        if self.newest_active >= to || self.newest_active > from {
            self.pending_injects -= 1;
            return;
        }
        if self.newest_active < from {
            self.push(
                self.now + self.sc.timing.quiescence_interval,
                Ev::InjectEc { from, to },
            );
            return;
        }
        self.pending_injects -= 1;
        let old = self.configs[&from].clone();
        let next = self.configs[&to].clone();
        let ec = EpochChange {
            from: old.epoch,
            next: next.clone(),
        };
        let targets: Vec<ReplicaRef> = old
            .members
            .iter()
            .map(ReplicaRef::of)
            .filter(|r| !self.nodes[r].crashed)
            .take(old.attest_quorum())
            .collect();
        for r in targets {
            let tx = SystemTx::EpochChange(ec.clone());
            self.with_node(r, |n, ctx| n.submit_local(tx, ctx));
        }
        for m in &next.members {
            let r = ReplicaRef::of(m);
            if !self.nodes[&r].crashed {
                self.with_node(r, |n, ctx| n.bootstrap(&ec, &old, ctx));
            }
        }
    }

    fn crash(&mut self, r: ReplicaRef) {
        let Some(n) = self.nodes.get_mut(&r) else {
            return;
        };
        if n.crashed {
            return;
        }
        n.crashed = true;
        self.records.push(Record::Fault {
            t: self.now,
            r,
            kind: "crash".into(),
            detail: String::new(),
        });
    }

    fn latency(&mut self) -> u64 {
        let d = &self.sc.network;
        self.rng
            .gen_range(d.min_latency..=d.max_latency.max(d.min_latency))
    }

    fn extra_delay(&self, from: ReplicaRef, to: ReplicaRef, msg: &NetMsg) -> u64 {
        let mut extra = 0;
        if let NetMsg::Consensus { epoch, msg } = msg {
            let from_slot = self.nodes.get(&from).map(|n| n.slot);
            let lane = match msg {
                ConsensusMsg::Lane(LaneMsg::Propose { .. }) => from_slot,
                m => m.lane(),
            };
            for (e, l, w) in &self.lane_delays {
                if *e == epoch.0 && lane == Some(*l) && from_slot == Some(*l) && w.covers(self.now)
                {
                    extra += w.extra;
                }
            }
        }
        for (f, t, w) in &self.link_delays {
            if *f == from && *t == to && w.covers(self.now) {
                extra += w.extra;
            }
        }
        extra
    }

    fn with_node(&mut self, r: ReplicaRef, f: impl FnOnce(&mut Node, &mut Ctx)) {
        let mut ctx = Ctx::new(self.now);
        let node = self.nodes.get_mut(&r).expect("known replica");
        f(node, &mut ctx);
        let active = node.is_active_member() && !node.crashed;
        let epoch = node.epoch().0;
        if active && epoch > self.newest_active {
            self.newest_active = epoch;
        }
        self.absorb(r, ctx);
    }

    fn absorb(&mut self, r: ReplicaRef, ctx: Ctx) {
        for rec in ctx.records {
            match &rec {
                Record::InnerEntry { epoch, pos, .. } => {
                    if !self.entries_seen.insert((*epoch, *pos)) {
                        continue;
                    }
                }
                Record::Emit { r: who, tx, .. } if !self.faulty.contains(who) => {
                    self.emitted_somewhere.insert(*tx);
                }
                _ => {}
            }
            self.records.push(rec);
        }
        for (to, msg) in ctx.sends {
            if !self.nodes.contains_key(&to) {
                continue;
            }
            let id = self.next_msg;
            self.next_msg += 1;
            let due = self.now + self.latency() + self.extra_delay(r, to, &msg);
            if self.sc.trace_messages {
                self.records.push(Record::Send {
                    t: self.now,
                    id,
                    from: r,
                    to,
                    kind: msg.kind(),
                    due,
                });
            }
            self.push(
                due,
                Ev::Deliver {
                    id,
                    from: r,
                    to,
                    msg,
                },
            );
        }
        for (after, timer) in ctx.timers {
            self.push(self.now + after.max(1), Ev::Timer { r, timer });
        }
        if ctx.crash_now {
            self.crash(r);
        }
    }

    fn correct(&self, r: &ReplicaRef) -> bool {
        !self.faulty.contains(r)
    }

    fn quiescent(&self) -> bool {
        if self.now < self.last_scheduled || self.pending_injects > 0 {
            return false;
        }
        let settled = self
            .nodes
            .iter()
            .filter(|(r, _)| self.correct(r))
            .all(|(_, n)| {
                matches!(
                    n.phase,
                    Phase::Active | Phase::ShutDown | Phase::Aborted | Phase::Idle
                )
            });
        if !settled {
            return false;
        }
        let owed: Vec<TxId> = self
            .clients
            .iter()
            .filter(|c| c.policy == ResubmitPolicy::Timeout && self.sc.exval.accepts(&c.tx))
            .map(|c| c.tx.id)
            .collect();
        let newest = self.newest_active;
        self.nodes
            .iter()
            .filter(|(r, n)| self.correct(r) && r.0 == newest && n.phase == Phase::Active)
            .all(|(_, n)| {
                let seen = n.sanitizer.as_ref().map(|s| s.seen_ids());
                owed.iter().all(|id| seen.is_some_and(|s| s.contains(id)))
            })
    }
}
