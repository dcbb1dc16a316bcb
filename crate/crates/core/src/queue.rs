//! Time-ordered event queue used by the simulators.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

/// Min-queue on `(time, tiebreak, seq)`. `seq` is an insertion counter, so
/// equal keys pop in insertion order and the order is total.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u64, u64)>>,
    items: HashMap<u64, E>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            items: HashMap::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: u64, tiebreak: u64, event: E) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse((time, tiebreak, seq)));
        self.items.insert(seq, event);
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((time, _, seq)) = self.heap.pop()?;
        let ev = self.items.remove(&seq).expect("queued item present");
        Some((time, ev))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
