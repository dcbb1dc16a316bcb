//! Trace records. A trace is written as JSON lines, one record per line,
//! fields in declaration order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::scenario::{ReplicaRef, Scenario};
use crate::engine::{ChainLink, Phase, Role};
use crate::error::TraceError;
use crate::model::{EntryContent, EpochId, HandoverCertificate, Hash, TxId};

pub const TRACE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub replica: ReplicaRef,
    pub crashed: bool,
    pub byzantine: bool,
    pub phase: Phase,
    /// Sanitizer position: epochs are consumed up to their cutoff, then
    /// `epoch` up to `ingested`. Absent for replicas that never synchronised.
    pub epoch: Option<EpochId>,
    pub ingested: u64,
    pub outer_len: u64,
    pub outer_digest: Hash,
    pub kv_digest: Hash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Record {
    Header {
        trace_version: u64,
        genesis_hash: Hash,
        scenario: Box<Scenario>,
    },
    Send {
        t: u64,
        id: u64,
        from: ReplicaRef,
        to: ReplicaRef,
        kind: String,
        due: u64,
    },
    Deliver {
        t: u64,
        id: u64,
    },
    Drop {
        t: u64,
        id: u64,
        reason: String,
    },
    ClientSubmit {
        t: u64,
        tx: TxId,
        label: String,
        to: ReplicaRef,
        attempt: u32,
        abandon_on_loss: bool,
    },
    InternalCommit {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        pos: u64,
    },
    /// Content of an inner-log position, recorded at its first release anywhere.
    InnerEntry {
        t: u64,
        epoch: EpochId,
        pos: u64,
        content: EntryContent,
    },
    InnerRelease {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        pos: u64,
        digest: Hash,
    },
    Emit {
        t: u64,
        r: ReplicaRef,
        outer: u64,
        tx: TxId,
        src_epoch: EpochId,
        src_pos: u64,
        adopted: bool,
    },
    /// The replica's sanitizer moved on to `epoch`.
    EpochMarker {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
    },
    Phase {
        t: u64,
        r: ReplicaRef,
        role: Role,
        from: Phase,
        to: Phase,
    },
    EpochChangeSeen {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        pos: u64,
        next: EpochId,
        preempted: Option<EpochId>,
    },
    EpochChangeIgnored {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        pos: u64,
        reason: String,
    },
    ReadySubmitted {
        t: u64,
        r: ReplicaRef,
        to: EpochId,
    },
    ReadySeen {
        t: u64,
        r: ReplicaRef,
        signer: ReplicaRef,
        epoch: EpochId,
        pos: u64,
        counted: bool,
        note: String,
    },
    Certificate {
        t: u64,
        r: ReplicaRef,
        hash: Hash,
        cert: HandoverCertificate,
    },
    DoneSubmitted {
        t: u64,
        r: ReplicaRef,
        cert_hash: Hash,
    },
    DoneSeen {
        t: u64,
        r: ReplicaRef,
        signer: ReplicaRef,
        epoch: EpochId,
        pos: u64,
        cert_hash: Hash,
        outcome: String,
    },
    Activated {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        at_pos: u64,
        link: ChainLink,
    },
    Halt {
        t: u64,
        r: ReplicaRef,
        epoch: EpochId,
        at_pos: u64,
    },
    SyncComplete {
        t: u64,
        r: ReplicaRef,
        digest: Hash,
        ec_pos: u64,
        adopted: u64,
    },
    Fault {
        t: u64,
        r: ReplicaRef,
        kind: String,
        detail: String,
    },
    Violation {
        t: u64,
        r: ReplicaRef,
        message: String,
    },
    End {
        t: u64,
        reason: String,
        cursors: Vec<Cursor>,
    },
}

impl Record {
    pub fn time(&self) -> u64 {
        use Record::*;
        match self {
            Header { .. } => 0,
            Send { t, .. }
            | Deliver { t, .. }
            | Drop { t, .. }
            | ClientSubmit { t, .. }
            | InternalCommit { t, .. }
            | InnerEntry { t, .. }
            | InnerRelease { t, .. }
            | Emit { t, .. }
            | EpochMarker { t, .. }
            | Phase { t, .. }
            | EpochChangeSeen { t, .. }
            | EpochChangeIgnored { t, .. }
            | ReadySubmitted { t, .. }
            | ReadySeen { t, .. }
            | Certificate { t, .. }
            | DoneSubmitted { t, .. }
            | DoneSeen { t, .. }
            | Activated { t, .. }
            | Halt { t, .. }
            | SyncComplete { t, .. }
            | Fault { t, .. }
            | Violation { t, .. }
            | End { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<Record>,
}

impl Trace {
    pub fn header(&self) -> Option<&Scenario> {
        match self.records.first() {
            Some(Record::Header { scenario, .. }) => Some(scenario),
            _ => None,
        }
    }

    pub fn genesis_hash(&self) -> Option<Hash> {
        match self.records.first() {
            Some(Record::Header { genesis_hash, .. }) => Some(*genesis_hash),
            _ => None,
        }
    }

    pub fn cursors(&self) -> &[Cursor] {
        match self.records.last() {
            Some(Record::End { cursors, .. }) => cursors,
            _ => &[],
        }
    }

    pub fn end_time(&self) -> u64 {
        self.records.last().map_or(0, Record::time)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?;
            records.push(rec);
        }
        let trace = Trace { records };
        if trace.header().is_none() {
            return Err(TraceError::MissingHeader);
        }
        Ok(trace)
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        Self::read_jsonl(text.as_bytes())
    }
}
