//! Read-only access to another epoch's inner log.
//!
//! A learner polls every member for committed entries and accepts a position
//! once `fetch_quorum` members returned the same content for it.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::codec::Encode;
use crate::model::{EntryContent, EpochConfig, EpochId, Hash, InnerLogEntry};

/// Entries returned per fetch.
pub const FETCH_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct Learner {
    epoch: EpochId,
    need: usize,
    next: u64,
    votes: BTreeMap<u64, BTreeMap<Hash, (EntryContent, BTreeSet<usize>)>>,
    base: u64,
    cap: u64,
    interval: u64,
    progressed: bool,
    active: bool,
}

impl Learner {
    pub fn new(config: &EpochConfig, start: u64, interval: u64, cap: u64) -> Self {
        Learner {
            epoch: config.epoch,
            need: config.fetch_quorum(),
            next: start,
            votes: BTreeMap::new(),
            base: interval,
            cap: cap.max(interval),
            interval,
            progressed: true,
            active: true,
        }
    }

    pub fn epoch(&self) -> EpochId {
        self.epoch
    }

    pub fn next(&self) -> u64 {
        self.next
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn stop(&mut self) {
        self.active = false;
        self.votes.clear();
    }

    /// Delay before the next poll; backs off while nothing new arrives.
    pub fn next_interval(&mut self) -> u64 {
        if self.progressed {
            self.interval = self.base;
        } else {
            self.interval = (self.interval * 2).min(self.cap);
        }
        self.progressed = false;
        self.interval
    }

    pub fn on_entries(
        &mut self,
        from: usize,
        start: u64,
        entries: Vec<EntryContent>,
    ) -> Vec<InnerLogEntry> {
        if !self.active {
            return Vec::new();
        }
        for (k, content) in entries.into_iter().enumerate() {
            let pos = start + k as u64;
            if pos < self.next {
                continue;
            }
            let slot = self.votes.entry(pos).or_default();
            slot.entry(content.digest())
                .or_insert_with(|| (content, BTreeSet::new()))
                .1
                .insert(from);
        }
        let mut out = Vec::new();
        while let Some(slot) = self.votes.get(&self.next) {
            let Some((content, _)) = slot.values().find(|(_, who)| who.len() >= self.need) else {
                break;
            };
            out.push(InnerLogEntry {
                epoch: self.epoch,
                position: self.next,
                content: content.clone(),
            });
            self.votes.remove(&self.next);
            self.next += 1;
        }
        if !out.is_empty() {
            self.progressed = true;
        }
        out
    }
}
