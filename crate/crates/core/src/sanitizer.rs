//! Incremental translation of inner logs into the outer log.
//!
//! The sanitizer consumes one epoch's inner log at a time, in position order.
//! A client transaction is emitted iff its position is within the epoch's
//! cutoff (once known), its id has never been emitted before, and the
//! validity predicate accepts it. System transactions and no-ops occupy
//! positions but never reach the outer log.

use std::collections::HashSet;

use crate::error::SanitizerError;
use crate::model::{
    EntryContent, EpochId, ExvalPolicy, HandoverCertificate, InnerLogEntry, OuterEntry, SourcePos,
    TxId,
};

#[derive(Debug, Clone)]
pub struct SanitizerState {
    current_epoch: EpochId,
    emit_cutoff: Option<u64>,
    next_epoch: Option<EpochId>,
    /// Highest position of `current_epoch` ingested so far.
    ingested: u64,
    seen_ids: HashSet<TxId>,
    outer_next: u64,
    exval: ExvalPolicy,
    /// Positions consumed per finished epoch, in order.
    finished: Vec<(EpochId, u64)>,
}

impl SanitizerState {
    pub fn new(genesis: EpochId, exval: ExvalPolicy) -> Self {
        SanitizerState {
            current_epoch: genesis,
            emit_cutoff: None,
            next_epoch: None,
            ingested: 0,
            seen_ids: HashSet::new(),
            outer_next: 1,
            exval,
            finished: Vec::new(),
        }
    }

    /// Resume from an adopted outer-log prefix, positioned after inner
    /// position `ingested` of `epoch`.
    pub fn resume(
        epoch: EpochId,
        ingested: u64,
        prefix: &[OuterEntry],
        exval: ExvalPolicy,
    ) -> Self {
        SanitizerState {
            current_epoch: epoch,
            emit_cutoff: None,
            next_epoch: None,
            ingested,
            seen_ids: prefix.iter().map(|e| e.tx.id).collect(),
            outer_next: prefix.len() as u64 + 1,
            exval,
            finished: Vec::new(),
        }
    }

    pub fn current_epoch(&self) -> EpochId {
        self.current_epoch
    }

    pub fn emit_cutoff(&self) -> Option<u64> {
        self.emit_cutoff
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    pub fn outer_next(&self) -> u64 {
        self.outer_next
    }

    pub fn seen_ids(&self) -> &HashSet<TxId> {
        &self.seen_ids
    }

    pub fn finished_epochs(&self) -> &[(EpochId, u64)] {
        &self.finished
    }

    pub fn set_exval(&mut self, exval: ExvalPolicy) {
        self.exval = exval;
    }

    /// True if `entry` lies in the discarded suffix of an epoch already left behind.
    pub fn is_truncated(&self, entry: &InnerLogEntry) -> bool {
        self.finished
            .iter()
            .any(|&(e, h)| e == entry.epoch && entry.position > h)
            || (entry.epoch == self.current_epoch
                && self.emit_cutoff.is_some_and(|h| entry.position > h))
    }

    pub fn ingest(&mut self, entry: &InnerLogEntry) -> Result<Option<OuterEntry>, SanitizerError> {
        if self.is_truncated(entry) {
            return Ok(None);
        }
        if entry.epoch != self.current_epoch {
            return Err(SanitizerError::WrongEpoch {
                current: self.current_epoch,
                got: entry.epoch,
            });
        }
        if entry.position != self.ingested + 1 {
            return Err(SanitizerError::OutOfOrder {
                epoch: entry.epoch,
                expected: self.ingested + 1,
                got: entry.position,
            });
        }
        self.ingested = entry.position;
        let out = match &entry.content {
            EntryContent::Client { tx }
                if !self.seen_ids.contains(&tx.id) && self.exval.accepts(tx) =>
            {
                self.seen_ids.insert(tx.id);
                let e = OuterEntry {
                    outer_position: self.outer_next,
                    tx: tx.clone(),
                    source: SourcePos {
                        epoch: entry.epoch,
                        position: entry.position,
                    },
                };
                self.outer_next += 1;
                Some(e)
            }
            _ => None,
        };
        self.maybe_advance();
        Ok(out)
    }

    /// Fix the cutoff of the current epoch. The sanitizer moves on to the
    /// next epoch once every position up to `h` has been ingested.
    pub fn apply_handover(&mut self, cert: &HandoverCertificate) -> Result<(), SanitizerError> {
        if cert.old_epoch != self.current_epoch {
            return Err(SanitizerError::CertForOtherEpoch {
                current: self.current_epoch,
                got: cert.old_epoch,
            });
        }
        if cert.h < self.ingested {
            return Err(SanitizerError::CutoffBehindFrontier {
                h: cert.h,
                ingested: self.ingested,
            });
        }
        self.emit_cutoff = Some(cert.h);
        self.next_epoch = Some(cert.next_config.epoch);
        self.maybe_advance();
        Ok(())
    }

    fn maybe_advance(&mut self) {
        if let (Some(h), Some(next)) = (self.emit_cutoff, self.next_epoch) {
            if self.ingested == h {
                self.finished.push((self.current_epoch, h));
                self.current_epoch = next;
                self.emit_cutoff = None;
                self.next_epoch = None;
                self.ingested = 0;
            }
        }
    }
}
