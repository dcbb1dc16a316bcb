//! A minimal driver for exercising one consensus instance in isolation.
//!
//! Used by the consensus tests and benches; the full simulator lives in
//! [`crate::sim`].

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ConsensusMsg, ConsensusPort, ConsensusReplica, ConsensusTimer, ConsensusTiming, Effect,
};
use crate::model::{EntryContent, EpochConfig, InnerLogEntry};
use crate::queue::EventQueue;

#[derive(Debug)]
enum Ev {
    Deliver {
        from: usize,
        to: usize,
        msg: ConsensusMsg,
    },
    Timer {
        at: usize,
        timer: ConsensusTimer,
    },
    Propose {
        at: usize,
        content: EntryContent,
    },
    Crash {
        at: usize,
    },
    Halt {
        at: usize,
    },
}

pub struct LocalNet {
    pub replicas: Vec<ConsensusReplica>,
    pub decided: Vec<Vec<InnerLogEntry>>,
    /// `(time, position)` of every internal commit, per replica.
    pub commit_times: Vec<Vec<(u64, u64)>>,
    pub crashed: BTreeSet<usize>,
    /// Extra latency added to messages concerning a lane.
    pub lane_delay: BTreeMap<usize, u64>,
    pub min_latency: u64,
    pub max_latency: u64,
    now: u64,
    queue: EventQueue<Ev>,
    rng: ChaCha8Rng,
}

impl LocalNet {
    pub fn new(config: &EpochConfig, timing: ConsensusTiming, seed: u64) -> Self {
        let n = config.n();
        LocalNet {
            replicas: (0..n)
                .map(|i| ConsensusReplica::started(config, i, timing))
                .collect(),
            decided: vec![Vec::new(); n],
            commit_times: vec![Vec::new(); n],
            crashed: BTreeSet::new(),
            lane_delay: BTreeMap::new(),
            min_latency: 5,
            max_latency: 15,
            now: 0,
            queue: EventQueue::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn propose_at(&mut self, time: u64, at: usize, content: EntryContent) {
        let tb = self.rng.gen();
        self.queue.push(time, tb, Ev::Propose { at, content });
    }

    pub fn crash_at(&mut self, time: u64, at: usize) {
        self.queue.push(time, 0, Ev::Crash { at });
    }

    pub fn halt_at(&mut self, time: u64, at: usize) {
        self.queue.push(time, 0, Ev::Halt { at });
    }

    fn apply(&mut self, at: usize, fx: Vec<Effect>) {
        for e in fx {
            match e {
                Effect::Send { to, msg } => {
                    let mut lat = self.rng.gen_range(self.min_latency..=self.max_latency);
                    if let Some(l) = msg.lane() {
                        lat += self.lane_delay.get(&l).copied().unwrap_or(0);
                    }
                    let tb = self.rng.gen();
                    self.queue
                        .push(self.now + lat, tb, Ev::Deliver { from: at, to, msg });
                }
                Effect::SetTimer { after, timer } => {
                    let tb = self.rng.gen();
                    self.queue
                        .push(self.now + after, tb, Ev::Timer { at, timer });
                }
                Effect::Committed { position } => self.commit_times[at].push((self.now, position)),
            }
        }
        while let Some(e) = self.replicas[at].poll_decided() {
            self.decided[at].push(e);
        }
    }

    /// Process events until the queue drains or `until` is reached.
    pub fn run_until(&mut self, until: u64) {
        while let Some(t) = self.queue.peek_time() {
            if t > until {
                break;
            }
            let (t, ev) = self.queue.pop().expect("peeked");
            self.now = t;
            let mut fx = Vec::new();
            let at = match ev {
                Ev::Deliver { from, to, msg } => {
                    if self.crashed.contains(&to) {
                        continue;
                    }
                    self.replicas[to].on_message(from, msg, &mut fx);
                    to
                }
                Ev::Timer { at, timer } => {
                    if self.crashed.contains(&at) {
                        continue;
                    }
                    self.replicas[at].on_timer(timer, &mut fx);
                    at
                }
                Ev::Propose { at, content } => {
                    if self.crashed.contains(&at) {
                        continue;
                    }
                    let _ = self.replicas[at].propose(content, &mut fx);
                    at
                }
                Ev::Crash { at } => {
                    self.crashed.insert(at);
                    continue;
                }
                Ev::Halt { at } => {
                    self.replicas[at].halt();
                    at
                }
            };
            self.apply(at, fx);
        }
        self.now = self.now.max(until);
    }

    pub fn correct(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.replicas.len()).filter(|i| !self.crashed.contains(i))
    }

    /// Client contents decided at replica `i`, in position order.
    pub fn client_log(&self, i: usize) -> Vec<EntryContent> {
        self.decided[i]
            .iter()
            .filter(|e| !matches!(e.content, EntryContent::Noop))
            .map(|e| e.content.clone())
            .collect()
    }
}
