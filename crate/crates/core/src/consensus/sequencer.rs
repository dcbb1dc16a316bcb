//! Leader-based reference protocol.
//!
//! The leader of view `v` is member `v mod n`. It assigns positions in
//! arrival order, followers accept appends in order and acknowledge their
//! contiguous log length, and the leader commits a position once `n - f`
//! members hold it. A replica with pending work that sees no progress for
//! `view_timeout` moves to the next view. View change follows Viewstamped
//! Replication: the new leader adopts the log with the highest last-normal
//! view (longest on ties) from `n - f` replicas.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::{
    ConsensusMsg, ConsensusPort, ConsensusTimer, ConsensusTiming, Effect, Halted, ReleaseQueue,
};
use crate::model::codec::Encode;
use crate::model::{EntryContent, EpochConfig, EpochId, Hash, InnerLogEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogSlot {
    pub content: EntryContent,
    pub view: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeqMsg {
    Forward {
        content: EntryContent,
    },
    Append {
        view: u64,
        pos: u64,
        content: EntryContent,
    },
    Ack {
        view: u64,
        upto: u64,
    },
    Commit {
        view: u64,
        index: u64,
    },
    StartViewChange {
        view: u64,
    },
    DoViewChange {
        view: u64,
        log: Arc<Vec<LogSlot>>,
        last_normal_view: u64,
        commit_index: u64,
    },
    NewView {
        view: u64,
        log: Arc<Vec<LogSlot>>,
        commit_index: u64,
    },
}

impl SeqMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            SeqMsg::Forward { .. } => "seq.forward",
            SeqMsg::Append { .. } => "seq.append",
            SeqMsg::Ack { .. } => "seq.ack",
            SeqMsg::Commit { .. } => "seq.commit",
            SeqMsg::StartViewChange { .. } => "seq.start_view_change",
            SeqMsg::DoViewChange { .. } => "seq.do_view_change",
            SeqMsg::NewView { .. } => "seq.new_view",
        }
    }

    fn view(&self) -> Option<u64> {
        match self {
            SeqMsg::Append { view, .. }
            | SeqMsg::Commit { view, .. }
            | SeqMsg::Ack { view, .. } => Some(*view),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqTimer {
    Progress { generation: u64 },
}

#[derive(Debug, Clone)]
pub struct Sequencer {
    epoch: EpochId,
    me: usize,
    n: usize,
    quorum: usize,
    timing: ConsensusTiming,
    halted: bool,

    view: u64,
    normal: bool,
    last_normal_view: u64,
    log: Vec<LogSlot>,
    commit_index: u64,
    leader_commit: u64,
    /// Leader only: highest contiguous position acknowledged by each member.
    match_index: Vec<u64>,
    assigned: HashSet<Hash>,
    early: BTreeMap<u64, LogSlot>,
    future: Vec<(usize, SeqMsg)>,
    vc_votes: BTreeMap<usize, (Arc<Vec<LogSlot>>, u64, u64)>,

    pending: Vec<EntryContent>,
    pending_keys: HashSet<Hash>,

    release: ReleaseQueue,
    queued_upto: u64,

    timer_armed: bool,
    timer_generation: u64,
    progress_mark: (u64, u64),
}

impl Sequencer {
    pub fn new(config: &EpochConfig, me: usize, timing: ConsensusTiming) -> Self {
        let n = config.n();
        Sequencer {
            epoch: config.epoch,
            me,
            n,
            quorum: config.consensus_quorum(),
            timing,
            halted: false,
            view: 0,
            normal: true,
            last_normal_view: 0,
            log: Vec::new(),
            commit_index: 0,
            leader_commit: 0,
            match_index: vec![0; n],
            assigned: HashSet::new(),
            early: BTreeMap::new(),
            future: Vec::new(),
            vc_votes: BTreeMap::new(),
            pending: Vec::new(),
            pending_keys: HashSet::new(),
            release: ReleaseQueue::new(config.epoch),
            queued_upto: 0,
            timer_armed: false,
            timer_generation: 0,
            progress_mark: (0, 0),
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn leader_of(&self, view: u64) -> usize {
        (view % self.n as u64) as usize
    }

    pub fn is_leader(&self) -> bool {
        self.normal && self.leader_of(self.view) == self.me
    }

    fn send(&self, fx: &mut Vec<Effect>, to: usize, msg: SeqMsg) {
        fx.push(Effect::Send {
            to,
            msg: ConsensusMsg::Seq(msg),
        });
    }

    fn broadcast(&self, fx: &mut Vec<Effect>, msg: SeqMsg) {
        for to in (0..self.n).filter(|&m| m != self.me) {
            self.send(fx, to, msg.clone());
        }
    }

    fn arm_timer(&mut self, fx: &mut Vec<Effect>) {
        if self.halted || self.timer_armed {
            return;
        }
        if self.pending.is_empty() && self.normal {
            return;
        }
        self.timer_armed = true;
        self.timer_generation += 1;
        self.progress_mark = (self.release.released() + self.queued_upto, self.view);
        fx.push(Effect::SetTimer {
            after: self.timing.view_timeout,
            timer: ConsensusTimer::Seq(SeqTimer::Progress {
                generation: self.timer_generation,
            }),
        });
    }

    fn leader_assign(&mut self, content: EntryContent, fx: &mut Vec<Effect>) {
        let Some(key) = content.dedup_key() else {
            return;
        };
        if self.assigned.contains(&key) || self.release.was_released(&key) {
            return;
        }
        self.assigned.insert(key);
        self.log.push(LogSlot {
            content: content.clone(),
            view: self.view,
        });
        let pos = self.log.len() as u64;
        self.match_index[self.me] = pos;
        self.broadcast(
            fx,
            SeqMsg::Append {
                view: self.view,
                pos,
                content,
            },
        );
        self.leader_advance_commit(fx);
    }

    fn leader_advance_commit(&mut self, fx: &mut Vec<Effect>) {
        let mut m = self.match_index.clone();
        m[self.me] = self.log.len() as u64;
        m.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = m[self.quorum - 1];
        if candidate > self.commit_index {
            self.commit_index = candidate;
            self.broadcast(
                fx,
                SeqMsg::Commit {
                    view: self.view,
                    index: candidate,
                },
            );
            self.queue_committed(fx);
        }
    }

    fn queue_committed(&mut self, fx: &mut Vec<Effect>) {
        while self.queued_upto < self.commit_index {
            let pos = self.queued_upto + 1;
            let content = self.log[(pos - 1) as usize].content.clone();
            self.release.insert(pos, content);
            self.queued_upto = pos;
            fx.push(Effect::Committed { position: pos });
        }
    }

    fn follower_apply_commit(&mut self, fx: &mut Vec<Effect>) {
        let upto = self.leader_commit.min(self.log.len() as u64);
        if upto > self.commit_index {
            self.commit_index = upto;
            self.queue_committed(fx);
        }
    }

    fn add_pending(&mut self, content: EntryContent) -> bool {
        let Some(key) = content.dedup_key() else {
            return false;
        };
        if self.release.was_released(&key) || !self.pending_keys.insert(key) {
            return false;
        }
        self.pending.push(content);
        true
    }

    fn route_pending(&mut self, fx: &mut Vec<Effect>) {
        if !self.normal || self.halted {
            return;
        }
        let leader = self.leader_of(self.view);
        for c in self.pending.clone() {
            if leader == self.me {
                self.leader_assign(c, fx);
            } else {
                self.send(fx, leader, SeqMsg::Forward { content: c });
            }
        }
    }

    fn start_view_change(&mut self, view: u64, fx: &mut Vec<Effect>) {
        if self.halted || view <= self.view && !self.normal {
            return;
        }
        self.view = view;
        self.normal = false;
        self.vc_votes.clear();
        self.early.clear();
        self.broadcast(fx, SeqMsg::StartViewChange { view });
        let leader = self.leader_of(view);
        let log = Arc::new(self.log.clone());
        if leader == self.me {
            self.vc_votes
                .insert(self.me, (log, self.last_normal_view, self.commit_index));
            self.try_install_view(fx);
        } else {
            self.send(
                fx,
                leader,
                SeqMsg::DoViewChange {
                    view,
                    log,
                    last_normal_view: self.last_normal_view,
                    commit_index: self.commit_index,
                },
            );
        }
        self.timer_armed = false;
        self.arm_timer(fx);
    }

    fn try_install_view(&mut self, fx: &mut Vec<Effect>) {
        if self.normal || self.vc_votes.len() < self.quorum {
            return;
        }
        let (log, _, _) = self
            .vc_votes
            .values()
            .max_by(|a, b| (a.1, a.0.len()).cmp(&(b.1, b.0.len())))
            .expect("quorum of votes")
            .clone();
        let ci = self.vc_votes.values().map(|v| v.2).max().unwrap_or(0);
        self.log = (*log).clone();
        self.normal = true;
        self.last_normal_view = self.view;
        self.assigned = self
            .log
            .iter()
            .filter_map(|s| s.content.dedup_key())
            .collect();
        self.match_index = vec![0; self.n];
        self.match_index[self.me] = self.log.len() as u64;
        self.commit_index = self.commit_index.max(ci.min(self.log.len() as u64));
        self.broadcast(
            fx,
            SeqMsg::NewView {
                view: self.view,
                log: Arc::new(self.log.clone()),
                commit_index: self.commit_index,
            },
        );
        self.queue_committed(fx);
        self.route_pending(fx);
        self.replay_future(fx);
        self.leader_advance_commit(fx);
    }

    fn replay_future(&mut self, fx: &mut Vec<Effect>) {
        let view = self.view;
        let (now, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.future)
            .into_iter()
            .filter(|(_, m)| m.view().is_some_and(|v| v >= view))
            .partition(|(_, m)| m.view() == Some(view));
        self.future = later;
        for (from, m) in now {
            self.handle(from, m, fx);
        }
    }

    fn handle(&mut self, from: usize, msg: SeqMsg, fx: &mut Vec<Effect>) {
        match msg {
            SeqMsg::Forward { content } => {
                if self.halted {
                    return;
                }
                if self.is_leader() {
                    self.leader_assign(content, fx);
                } else if self.add_pending(content) {
                    self.route_pending(fx);
                    self.arm_timer(fx);
                }
            }
            SeqMsg::Append { view, pos, content } => {
                if view < self.view {
                    return;
                }
                if view > self.view || !self.normal {
                    self.future
                        .push((from, SeqMsg::Append { view, pos, content }));
                    return;
                }
                let len = self.log.len() as u64;
                if pos == len + 1 {
                    self.log.push(LogSlot { content, view });
                    while let Some(slot) = self.early.remove(&(self.log.len() as u64 + 1)) {
                        self.log.push(slot);
                    }
                    if !self.halted {
                        let upto = self.log.len() as u64;
                        self.send(fx, self.leader_of(self.view), SeqMsg::Ack { view, upto });
                    }
                    self.follower_apply_commit(fx);
                } else if pos > len + 1 {
                    self.early.insert(pos, LogSlot { content, view });
                }
            }
            SeqMsg::Ack { view, upto } => {
                if view == self.view && self.is_leader() {
                    let m = &mut self.match_index[from];
                    *m = (*m).max(upto.min(self.log.len() as u64));
                    self.leader_advance_commit(fx);
                } else if view > self.view {
                    self.future.push((from, SeqMsg::Ack { view, upto }));
                }
            }
            SeqMsg::Commit { view, index } => {
                if view < self.view {
                    return;
                }
                if view > self.view || !self.normal {
                    self.future.push((from, SeqMsg::Commit { view, index }));
                    return;
                }
                self.leader_commit = self.leader_commit.max(index);
                self.follower_apply_commit(fx);
            }
            SeqMsg::StartViewChange { view } => {
                if view > self.view {
                    self.start_view_change(view, fx);
                }
            }
            SeqMsg::DoViewChange {
                view,
                log,
                last_normal_view,
                commit_index,
            } => {
                if self.halted || view < self.view {
                    return;
                }
                if view > self.view {
                    self.start_view_change(view, fx);
                }
                if self.leader_of(view) != self.me || self.normal || view != self.view {
                    return;
                }
                self.vc_votes
                    .insert(from, (log, last_normal_view, commit_index));
                self.try_install_view(fx);
            }
            SeqMsg::NewView {
                view,
                log,
                commit_index,
            } => {
                if view < self.view || (view == self.view && self.normal) {
                    return;
                }
                self.view = view;
                self.normal = true;
                self.last_normal_view = view;
                self.log = (*log).clone();
                self.early.clear();
                self.vc_votes.clear();
                self.leader_commit = commit_index;
                self.follower_apply_commit(fx);
                if !self.halted {
                    let upto = self.log.len() as u64;
                    self.send(fx, self.leader_of(view), SeqMsg::Ack { view, upto });
                }
                self.route_pending(fx);
                self.replay_future(fx);
                self.timer_armed = false;
                self.arm_timer(fx);
            }
        }
    }
}

impl ConsensusPort for Sequencer {
    fn epoch(&self) -> EpochId {
        self.epoch
    }

    fn propose(&mut self, content: EntryContent, fx: &mut Vec<Effect>) -> Result<(), Halted> {
        if self.halted {
            return Err(Halted);
        }
        if let Some(key) = content.dedup_key() {
            if self.is_leader() && self.assigned.contains(&key) {
                return Ok(());
            }
        }
        if !self.add_pending(content.clone()) {
            return Ok(());
        }
        if self.normal {
            let leader = self.leader_of(self.view);
            if leader == self.me {
                self.leader_assign(content, fx);
            } else {
                self.send(fx, leader, SeqMsg::Forward { content });
            }
        }
        self.arm_timer(fx);
        Ok(())
    }

    fn on_message(&mut self, from: usize, msg: ConsensusMsg, fx: &mut Vec<Effect>) {
        if let ConsensusMsg::Seq(m) = msg {
            self.handle(from, m, fx);
        }
    }

    fn on_timer(&mut self, timer: ConsensusTimer, fx: &mut Vec<Effect>) {
        let ConsensusTimer::Seq(SeqTimer::Progress { generation }) = timer else {
            return;
        };
        if generation != self.timer_generation {
            return;
        }
        self.timer_armed = false;
        if self.halted {
            return;
        }
        let mark = (self.release.released() + self.queued_upto, self.view);
        let stuck = !self.pending.is_empty() || !self.normal;
        if stuck && mark == self.progress_mark {
            self.start_view_change(self.view + 1, fx);
        } else {
            self.arm_timer(fx);
        }
    }

    fn poll_decided(&mut self) -> Option<InnerLogEntry> {
        let e = self.release.pop()?;
        if let Some(k) = e.content.dedup_key() {
            if self.pending_keys.remove(&k) {
                self.pending.retain(|c| c.dedup_key() != Some(k));
            }
        }
        Some(e)
    }

    fn halt(&mut self) {
        self.halted = true;
    }

    fn is_halted(&self) -> bool {
        self.halted
    }
}

/// Digest a view-change log, for tests that compare replicas.
pub fn log_digest(log: &[LogSlot]) -> Hash {
    let mut bytes = Vec::new();
    for s in log {
        s.content.encode(&mut bytes);
    }
    crate::model::hash_bytes(&bytes)
}
