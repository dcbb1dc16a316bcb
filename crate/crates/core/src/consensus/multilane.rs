//! Multi-proposer reference protocol.
//!
//! Member `l` owns lane `l`. Slot `(round, lane)` maps to inner position
//! `(round - 1) * n + lane + 1`. Slots commit independently of each other, so
//! positions can commit out of order; the release queue hands them out in order.
//!
//! Each slot runs a small single-decree agreement. Ballot 0 is the fast path:
//! members vote for the owner's proposal as soon as they receive it and the
//! slot commits on `n - f` matching votes. A slot still open after
//! `noop_timeout` moves to ballot 1, 2, ... Ballot `b` is coordinated by member
//! `(lane + b) mod n`, which collects `n - f` reports of the members' latest
//! votes, re-proposes the value of the highest-ballot vote it saw, or a no-op
//! when nobody voted, and the slot commits on `n - f` votes in that ballot.
//!
//! Rounds are logical: a member that learns of round `r` fills its own lane
//! up to `r`, with queued work if it has any and a no-op proposal otherwise.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use super::{
    ConsensusMsg, ConsensusPort, ConsensusTimer, ConsensusTiming, Effect, Halted, ReleaseQueue,
};
use crate::model::codec::Encode;
use crate::model::{EntryContent, EpochConfig, EpochId, Hash, InnerLogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaneVote {
    Content(Hash),
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LaneMsg {
    Propose {
        round: u64,
        content: EntryContent,
    },
    Vote {
        round: u64,
        lane: usize,
        ballot: u64,
        value: LaneVote,
    },
    /// Sent to the coordinator of `ballot`: the sender's latest vote, and the
    /// proposal if it holds it. Promises to ignore lower ballots.
    Report {
        round: u64,
        lane: usize,
        ballot: u64,
        last: Option<(u64, LaneVote)>,
        content: Option<EntryContent>,
    },
    Accept {
        round: u64,
        lane: usize,
        ballot: u64,
        value: LaneVote,
        content: Option<EntryContent>,
    },
}

impl LaneMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            LaneMsg::Propose { .. } => "lane.propose",
            LaneMsg::Vote { .. } => "lane.vote",
            LaneMsg::Report { .. } => "lane.report",
            LaneMsg::Accept { .. } => "lane.accept",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneTimer {
    Tick,
    NoopCheck {
        round: u64,
    },
    Retry {
        round: u64,
        lane: usize,
        ballot: u64,
    },
}

type Slot = (u64, usize);

#[derive(Debug, Clone, Default)]
struct SlotState {
    promised: u64,
    last: Option<(u64, LaneVote)>,
    voted_ballots: BTreeSet<u64>,
    /// Highest ballot this member reported for.
    reported: u64,
    /// (ballot, value) -> voters
    tally: HashMap<(u64, LaneVote), BTreeSet<usize>>,
    /// Coordinator side: ballot -> reporter -> latest vote.
    reports: BTreeMap<u64, BTreeMap<usize, Option<(u64, LaneVote)>>>,
    accepted_sent: BTreeSet<u64>,
    /// A quorum formed on this digest before the proposal itself arrived.
    awaiting: Option<Hash>,
}

#[derive(Debug, Clone)]
pub struct MultiLane {
    epoch: EpochId,
    me: usize,
    n: usize,
    quorum: usize,
    timing: ConsensusTiming,
    halted: bool,

    queue: VecDeque<EntryContent>,
    queued_keys: HashSet<Hash>,
    /// Next round this member's lane will fill.
    next_round: u64,
    known_round: u64,
    tick_armed: bool,

    proposals: HashMap<Slot, EntryContent>,
    /// Client work proposed by this member, by round, until its slot commits.
    my_proposals: HashMap<u64, EntryContent>,
    slots: HashMap<Slot, SlotState>,
    committed: HashSet<Slot>,

    release: ReleaseQueue,
}

impl MultiLane {
    pub fn new(config: &EpochConfig, me: usize, timing: ConsensusTiming) -> Self {
        MultiLane {
            epoch: config.epoch,
            me,
            n: config.n(),
            quorum: config.consensus_quorum(),
            timing,
            halted: false,
            queue: VecDeque::new(),
            queued_keys: HashSet::new(),
            next_round: 1,
            known_round: 0,
            tick_armed: false,
            proposals: HashMap::new(),
            my_proposals: HashMap::new(),
            slots: HashMap::new(),
            committed: HashSet::new(),
            release: ReleaseQueue::new(config.epoch),
        }
    }

    pub fn position_of(&self, round: u64, lane: usize) -> u64 {
        (round - 1) * self.n as u64 + lane as u64 + 1
    }

    pub fn slot_of(&self, position: u64) -> (u64, usize) {
        let p = position - 1;
        (p / self.n as u64 + 1, (p % self.n as u64) as usize)
    }

    fn coordinator(&self, lane: usize, ballot: u64) -> usize {
        (lane + ballot as usize) % self.n
    }

    fn broadcast(&self, fx: &mut Vec<Effect>, msg: LaneMsg) {
        for to in (0..self.n).filter(|&m| m != self.me) {
            fx.push(Effect::Send {
                to,
                msg: ConsensusMsg::Lane(msg.clone()),
            });
        }
    }

    fn arm_tick(&mut self, fx: &mut Vec<Effect>) {
        if self.tick_armed || self.halted || self.queue.is_empty() {
            return;
        }
        self.tick_armed = true;
        fx.push(Effect::SetTimer {
            after: self.timing.slot_interval,
            timer: ConsensusTimer::Lane(LaneTimer::Tick),
        });
    }

    /// Fill this member's lane at `next_round`.
    fn propose_next(&mut self, allow_noop: bool, fx: &mut Vec<Effect>) {
        let content = match self.queue.pop_front() {
            Some(c) => {
                if let Some(k) = c.dedup_key() {
                    self.queued_keys.remove(&k);
                }
                c
            }
            None if allow_noop => EntryContent::Noop,
            None => return,
        };
        let round = self.next_round;
        self.next_round += 1;
        if !matches!(content, EntryContent::Noop) {
            self.my_proposals.insert(round, content.clone());
        }
        self.broadcast(
            fx,
            LaneMsg::Propose {
                round,
                content: content.clone(),
            },
        );
        self.on_proposal(round, self.me, content, fx);
    }

    fn learn_round(&mut self, round: u64, fx: &mut Vec<Effect>) {
        if round <= self.known_round {
            return;
        }
        for r in self.known_round + 1..=round {
            fx.push(Effect::SetTimer {
                after: self.timing.noop_timeout,
                timer: ConsensusTimer::Lane(LaneTimer::NoopCheck { round: r }),
            });
        }
        self.known_round = round;
        if self.halted {
            return;
        }
        while self.next_round <= round {
            self.propose_next(true, fx);
        }
    }

    fn value_of(content: &EntryContent) -> LaneVote {
        match content {
            EntryContent::Noop => LaneVote::Noop,
            c => LaneVote::Content(c.digest()),
        }
    }

    fn cast_vote(&mut self, slot: Slot, ballot: u64, value: LaneVote, fx: &mut Vec<Effect>) {
        if self.halted || self.committed.contains(&slot) {
            return;
        }
        let st = self.slots.entry(slot).or_default();
        if st.promised > ballot || !st.voted_ballots.insert(ballot) {
            return;
        }
        st.promised = ballot;
        st.last = Some((ballot, value));
        let (round, lane) = slot;
        self.broadcast(
            fx,
            LaneMsg::Vote {
                round,
                lane,
                ballot,
                value,
            },
        );
        self.on_vote(self.me, slot, ballot, value, fx);
    }

    fn on_proposal(
        &mut self,
        round: u64,
        lane: usize,
        content: EntryContent,
        fx: &mut Vec<Effect>,
    ) {
        let slot = (round, lane);
        if self.proposals.contains_key(&slot) {
            return;
        }
        let value = Self::value_of(&content);
        self.proposals.insert(slot, content);
        self.check_awaiting(slot, fx);
        self.learn_round(round, fx);
        self.cast_vote(slot, 0, value, fx);
    }

    fn check_awaiting(&mut self, slot: Slot, fx: &mut Vec<Effect>) {
        let Some(d) = self.slots.get(&slot).and_then(|s| s.awaiting) else {
            return;
        };
        if self.proposals.get(&slot).map(Self::value_of) == Some(LaneVote::Content(d)) {
            self.commit(slot, LaneVote::Content(d), fx);
        }
    }

    fn on_vote(
        &mut self,
        from: usize,
        slot: Slot,
        ballot: u64,
        value: LaneVote,
        fx: &mut Vec<Effect>,
    ) {
        let (round, lane) = slot;
        if lane >= self.n || round == 0 {
            return;
        }
        self.learn_round(round, fx);
        if self.committed.contains(&slot) {
            return;
        }
        let st = self.slots.entry(slot).or_default();
        let set = st.tally.entry((ballot, value)).or_default();
        set.insert(from);
        if set.len() < self.quorum {
            return;
        }
        match value {
            LaneVote::Noop => self.commit(slot, value, fx),
            LaneVote::Content(d) => {
                if self.proposals.get(&slot).map(Self::value_of) == Some(value) {
                    self.commit(slot, value, fx);
                } else {
                    self.slots.entry(slot).or_default().awaiting = Some(d);
                }
            }
        }
    }

    /// Join a higher ballot someone else already started for `slot`.
    fn observe_ballot(&mut self, slot: Slot, ballot: u64, fx: &mut Vec<Effect>) {
        if ballot == 0 || self.committed.contains(&slot) {
            return;
        }
        let st = self.slots.entry(slot).or_default();
        if ballot > st.reported && st.promised <= ballot {
            self.start_ballot(slot, ballot, fx);
        }
    }

    /// Move to `ballot` for a stalled slot: report to its coordinator and arm a retry.
    fn start_ballot(&mut self, slot: Slot, ballot: u64, fx: &mut Vec<Effect>) {
        if self.halted || self.committed.contains(&slot) {
            return;
        }
        let st = self.slots.entry(slot).or_default();
        if st.promised > ballot || st.reported >= ballot {
            return;
        }
        st.promised = ballot;
        st.reported = ballot;
        let last = st.last;
        let (round, lane) = slot;
        let content = self.proposals.get(&slot).cloned();
        let coord = self.coordinator(lane, ballot);
        let msg = LaneMsg::Report {
            round,
            lane,
            ballot,
            last,
            content: content.clone(),
        };
        if coord == self.me {
            self.on_report(self.me, slot, ballot, last, content, fx);
        } else {
            fx.push(Effect::Send {
                to: coord,
                msg: ConsensusMsg::Lane(msg),
            });
        }
        fx.push(Effect::SetTimer {
            after: self.timing.noop_timeout,
            timer: ConsensusTimer::Lane(LaneTimer::Retry {
                round,
                lane,
                ballot,
            }),
        });
    }

    fn on_report(
        &mut self,
        from: usize,
        slot: Slot,
        ballot: u64,
        last: Option<(u64, LaneVote)>,
        content: Option<EntryContent>,
        fx: &mut Vec<Effect>,
    ) {
        let (round, lane) = slot;
        if self.coordinator(lane, ballot) != self.me || ballot == 0 || self.halted {
            return;
        }
        if let Some(c) = content {
            if let std::collections::hash_map::Entry::Vacant(e) = self.proposals.entry(slot) {
                e.insert(c);
                self.check_awaiting(slot, fx);
            }
        }
        if self.committed.contains(&slot) {
            return;
        }
        let quorum = self.quorum;
        let st = self.slots.entry(slot).or_default();
        if st.accepted_sent.contains(&ballot) {
            return;
        }
        let reps = st.reports.entry(ballot).or_default();
        reps.insert(from, last);
        if reps.len() < quorum {
            return;
        }
        let chosen = reps
            .values()
            .flatten()
            .max_by_key(|(b, _)| *b)
            .map(|(_, v)| *v)
            .unwrap_or(LaneVote::Noop);
        let content = match chosen {
            LaneVote::Noop => None,
            LaneVote::Content(d) => match self.proposals.get(&slot) {
                Some(c) if Self::value_of(c) == LaneVote::Content(d) => Some(c.clone()),
                // Someone voted for it, so its proposal will reach us through a report or the owner.
                _ => return,
            },
        };
        st.accepted_sent.insert(ballot);
        let msg = LaneMsg::Accept {
            round,
            lane,
            ballot,
            value: chosen,
            content: content.clone(),
        };
        self.broadcast(fx, msg);
        self.on_accept(slot, ballot, chosen, content, fx);
    }

    fn on_accept(
        &mut self,
        slot: Slot,
        ballot: u64,
        value: LaneVote,
        content: Option<EntryContent>,
        fx: &mut Vec<Effect>,
    ) {
        if let Some(c) = content {
            if Self::value_of(&c) == value && !self.proposals.contains_key(&slot) {
                self.proposals.insert(slot, c);
                self.check_awaiting(slot, fx);
            }
        }
        self.learn_round(slot.0, fx);
        self.cast_vote(slot, ballot, value, fx);
    }

    fn commit(&mut self, slot: Slot, value: LaneVote, fx: &mut Vec<Effect>) {
        if !self.committed.insert(slot) {
            return;
        }
        let noop = value == LaneVote::Noop;
        let content = if noop {
            EntryContent::Noop
        } else {
            self.proposals
                .get(&slot)
                .cloned()
                .expect("content committed only once held")
        };
        self.slots.remove(&slot);
        let (round, lane) = slot;
        if lane == self.me {
            if let Some(mine) = self.my_proposals.remove(&round) {
                // The slot went to a no-op; the work is still owed.
                if noop && !self.halted {
                    if let Some(k) = mine.dedup_key() {
                        if !self.release.was_released(&k) && self.queued_keys.insert(k) {
                            self.queue.push_front(mine);
                            self.arm_tick(fx);
                        }
                    }
                }
            }
        }
        let position = self.position_of(round, lane);
        self.release.insert(position, content);
        fx.push(Effect::Committed { position });
    }
}

impl ConsensusPort for MultiLane {
    fn epoch(&self) -> EpochId {
        self.epoch
    }

    fn propose(&mut self, content: EntryContent, fx: &mut Vec<Effect>) -> Result<(), Halted> {
        if self.halted {
            return Err(Halted);
        }
        let Some(key) = content.dedup_key() else {
            return Ok(());
        };
        if self.release.was_released(&key)
            || self
                .my_proposals
                .values()
                .any(|c| c.dedup_key() == Some(key))
            || !self.queued_keys.insert(key)
        {
            return Ok(());
        }
        self.queue.push_back(content);
        if !self.tick_armed {
            self.propose_next(false, fx);
        }
        self.arm_tick(fx);
        Ok(())
    }

    fn on_message(&mut self, from: usize, msg: ConsensusMsg, fx: &mut Vec<Effect>) {
        let ConsensusMsg::Lane(m) = msg else { return };
        if from >= self.n {
            return;
        }
        match m {
            LaneMsg::Propose { round, content } => {
                if round > 0 {
                    self.on_proposal(round, from, content, fx);
                }
            }
            LaneMsg::Vote {
                round,
                lane,
                ballot,
                value,
            } => {
                if round > 0 && lane < self.n {
                    self.on_vote(from, (round, lane), ballot, value, fx);
                    self.observe_ballot((round, lane), ballot, fx);
                }
            }
            LaneMsg::Report {
                round,
                lane,
                ballot,
                last,
                content,
            } => {
                if round > 0 && lane < self.n {
                    self.on_report(from, (round, lane), ballot, last, content, fx);
                    self.observe_ballot((round, lane), ballot, fx);
                }
            }
            LaneMsg::Accept {
                round,
                lane,
                ballot,
                value,
                content,
            } => {
                if round > 0 && lane < self.n && from == self.coordinator(lane, ballot) {
                    self.observe_ballot((round, lane), ballot, fx);
                    self.on_accept((round, lane), ballot, value, content, fx);
                }
            }
        }
    }

    fn on_timer(&mut self, timer: ConsensusTimer, fx: &mut Vec<Effect>) {
        let ConsensusTimer::Lane(t) = timer else {
            return;
        };
        match t {
            LaneTimer::Tick => {
                self.tick_armed = false;
                if self.halted {
                    return;
                }
                self.propose_next(false, fx);
                self.arm_tick(fx);
            }
            LaneTimer::NoopCheck { round } => {
                for lane in 0..self.n {
                    if !self.committed.contains(&(round, lane)) {
                        self.start_ballot((round, lane), 1, fx);
                    }
                }
            }
            LaneTimer::Retry {
                round,
                lane,
                ballot,
            } => {
                let slot = (round, lane);
                if self.committed.contains(&slot) {
                    return;
                }
                let st = self.slots.entry(slot).or_default();
                // Superseded: a later ballot armed its own retry.
                if ballot < st.reported {
                    return;
                }
                let next = ballot.max(st.promised) + 1;
                self.start_ballot(slot, next, fx);
            }
        }
    }

    fn poll_decided(&mut self) -> Option<InnerLogEntry> {
        self.release.pop()
    }

    fn halt(&mut self) {
        self.halted = true;
    }

    fn is_halted(&self) -> bool {
        self.halted
    }
}
