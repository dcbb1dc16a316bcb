use thiserror::Error;

use crate::model::{EpochId, ReplicaId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key must be {expected} bytes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("all-zero key material")]
    AllZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigViolation {
    #[error("{n} < {bound} = {need}")]
    TooFewMembers {
        n: u64,
        bound: &'static str,
        need: u64,
    },
    #[error("duplicate member {member}")]
    DuplicateMember { member: ReplicaId },
    #[error("member {member} does not belong to epoch {epoch}")]
    ForeignMember { member: ReplicaId, epoch: EpochId },
}

/// Ingestion-order faults. The consensus port guarantees in-order delivery,
/// so these indicate a wiring bug rather than a protocol event.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SanitizerError {
    #[error("entry from epoch {got} while sanitizing epoch {current}")]
    WrongEpoch { current: EpochId, got: EpochId },
    #[error("epoch {epoch}: expected inner position {expected}, got {got}")]
    OutOfOrder {
        epoch: EpochId,
        expected: u64,
        got: u64,
    },
    #[error("handover for epoch {got} while sanitizing epoch {current}")]
    CertForOtherEpoch { current: EpochId, got: EpochId },
    #[error("handover at h={h} but positions up to {ingested} were already ingested")]
    CutoffBehindFrontier { h: u64, ingested: u64 },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{field} required")]
    Missing { field: &'static str },
    #[error("unsupported scenario_version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },
    #[error("line {line}: {field}: {message}")]
    Invalid {
        field: String,
        line: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Semantic { field: String, message: String },
    #[error("parse error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace has no header record")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results to report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}
