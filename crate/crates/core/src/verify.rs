//! Offline trace checker.
//!
//! Everything here works from the recorded trace alone. The outer-log oracle
//! and the handover scan are batch re-implementations over the full inner logs
//! and share no state machine code with the replicas.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::engine::{verify_trust_chain, ChainLink, Phase};
use crate::model::codec::Encode;
use crate::model::{
    ClientId, Done, EntryContent, EpochChange, EpochConfig, EpochId, GenesisRecord,
    HandoverCertificate, Hash, ReplicaId, SystemTx, Transaction, TxId,
};
use crate::sim::{Cursor, Record, ReplicaRef, Scenario, Trace};

pub const SAFETY: &str = "safety";
pub const INTEGRITY: &str = "integrity";
pub const EXVAL: &str = "exval";
pub const LIVENESS: &str = "liveness";
pub const FAIRNESS: &str = "fairness";
pub const ORACLE: &str = "oracle";
pub const INNER_CONSISTENCY: &str = "inner_consistency";
pub const UNIQUE_CERTIFICATES: &str = "unique_certificates";
pub const SINGLE_ACTIVE_EPOCH: &str = "single_active_epoch";
pub const NO_PRE_QUORUM_SHUTDOWN: &str = "no_pre_quorum_shutdown";
pub const NO_POST_PREEMPTION_ACTIVATION: &str = "no_post_preemption_activation";
pub const PHASE_ORDER: &str = "phase_order";
pub const TRUST_CHAIN: &str = "trust_chain";
pub const ACTIVATION_QUORUM: &str = "activation_quorum";
pub const HANDOVER_POINT: &str = "handover_point";
pub const REPLICA_VIOLATIONS: &str = "replica_violations";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail {
        events: Vec<usize>,
        explanation: String,
    },
    NotApplicable {
        reason: String,
    },
}

impl Verdict {
    fn fail(events: Vec<usize>, explanation: impl Into<String>) -> Self {
        Verdict::Fail {
            events,
            explanation: explanation.into(),
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub end_time: u64,
    pub end_reason: String,
    pub records: usize,
    pub checks: Vec<CheckResult>,
}

impl Report {
    /// No check failed. Not-applicable checks do not count against a run.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| !c.verdict.is_fail())
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.verdict)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.verdict.is_fail()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict-report 1");
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "end: t={} ({})", self.end_time, self.end_reason);
        let _ = writeln!(s, "records: {}", self.records);
        let (mut p, mut f, mut na) = (0, 0, 0);
        for c in &self.checks {
            match &c.verdict {
                Verdict::Pass => {
                    p += 1;
                    let _ = writeln!(s, "check {}: PASS", c.name);
                }
                Verdict::NotApplicable { reason } => {
                    na += 1;
                    let _ = writeln!(s, "check {}: N/A ({reason})", c.name);
                }
                Verdict::Fail {
                    events,
                    explanation,
                } => {
                    f += 1;
                    let ev: Vec<String> = events.iter().take(8).map(usize::to_string).collect();
                    let _ = writeln!(
                        s,
                        "check {}: FAIL events=[{}] {explanation}",
                        c.name,
                        ev.join(",")
                    );
                }
            }
        }
        let _ = writeln!(s, "summary: {p} pass, {f} fail, {na} n/a");
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// One line of an outer log as the oracle or a replica sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OuterLine {
    pub outer: u64,
    pub tx: TxId,
    pub src_epoch: EpochId,
    pub src_pos: u64,
}

/// Handover facts recovered from one epoch's inner log by a linear scan.
#[derive(Debug, Clone, Default)]
pub struct EpochScan {
    /// Every accepted EpochChange with its position and the epoch that preempted it, if any.
    pub changes: Vec<(u64, EpochChange, Option<EpochId>)>,
    /// `(h, next configuration, ec hash)` once every incoming member's Ready is ordered.
    pub cert: Option<(u64, EpochConfig, Hash)>,
}

pub fn scan_epoch(epoch: EpochId, log: &BTreeMap<u64, EntryContent>) -> EpochScan {
    let mut out = EpochScan::default();
    let mut pending: Option<(usize, Hash)> = None;
    let mut signers: BTreeSet<ReplicaId> = BTreeSet::new();
    for (expect, (&pos, content)) in (1..).zip(log) {
        if pos != expect {
            break;
        }
        let EntryContent::System { tx } = content else {
            continue;
        };
        match tx {
            SystemTx::EpochChange(ec) => {
                let newer =
                    pending.is_none_or(|(i, _)| ec.next.epoch > out.changes[i].1.next.epoch);
                if ec.from == epoch && ec.next.epoch > epoch && ec.next.validate().is_ok() && newer
                {
                    if let Some((i, _)) = pending {
                        out.changes[i].2 = Some(ec.next.epoch);
                    }
                    out.changes.push((pos, ec.clone(), None));
                    pending = Some((out.changes.len() - 1, ec.digest()));
                    signers.clear();
                }
            }
            SystemTx::Ready(r) => {
                let Some((i, hash)) = pending else { continue };
                let next = &out.changes[i].1.next;
                let b = &r.body;
                if b.ec_hash == hash
                    && b.from == epoch
                    && b.to == next.epoch
                    && next.contains(&b.signer)
                    && r.verify()
                {
                    signers.insert(b.signer);
                    if signers.len() == next.n() {
                        out.cert = Some((pos, next.clone(), hash));
                        return out;
                    }
                }
            }
            SystemTx::Done(_) => {}
        }
    }
    out
}

struct View<'t> {
    trace: &'t Trace,
    sc: &'t Scenario,
    configs: BTreeMap<EpochId, EpochConfig>,
    faulty: BTreeSet<ReplicaRef>,
    inner: BTreeMap<EpochId, BTreeMap<u64, EntryContent>>,
    inner_idx: HashMap<(EpochId, u64), usize>,
    emits: BTreeMap<ReplicaRef, Vec<(usize, OuterLine)>>,
    cursors: BTreeMap<ReplicaRef, Cursor>,
    scans: BTreeMap<EpochId, EpochScan>,
    end_time: u64,
}

impl<'t> View<'t> {
    fn new(trace: &'t Trace, sc: &'t Scenario) -> Self {
        let configs = sc.configs().into_iter().map(|c| (c.epoch, c)).collect();
        let faulty = sc
            .schedule
            .iter()
            .filter_map(|e| e.faulty_replica())
            .collect();
        let mut inner: BTreeMap<EpochId, BTreeMap<u64, EntryContent>> = BTreeMap::new();
        let mut inner_idx = HashMap::new();
        let mut emits: BTreeMap<ReplicaRef, Vec<(usize, OuterLine)>> = BTreeMap::new();
        for (i, rec) in trace.records.iter().enumerate() {
            match rec {
                Record::InnerEntry {
                    epoch,
                    pos,
                    content,
                    ..
                } => {
                    inner
                        .entry(*epoch)
                        .or_default()
                        .entry(*pos)
                        .or_insert_with(|| content.clone());
                    inner_idx.entry((*epoch, *pos)).or_insert(i);
                }
                Record::Emit {
                    r,
                    outer,
                    tx,
                    src_epoch,
                    src_pos,
                    ..
                } => emits.entry(*r).or_default().push((
                    i,
                    OuterLine {
                        outer: *outer,
                        tx: *tx,
                        src_epoch: *src_epoch,
                        src_pos: *src_pos,
                    },
                )),
                _ => {}
            }
        }
        let scans = inner
            .iter()
            .map(|(e, log)| (*e, scan_epoch(*e, log)))
            .collect();
        let cursors = trace
            .cursors()
            .iter()
            .map(|c| (c.replica, c.clone()))
            .collect();
        View {
            trace,
            sc,
            configs,
            faulty,
            inner,
            inner_idx,
            emits,
            cursors,
            scans,
            end_time: trace.end_time(),
        }
    }

    fn correct(&self, r: &ReplicaRef) -> bool {
        !self.faulty.contains(r)
    }

    fn records(&self) -> impl Iterator<Item = (usize, &'t Record)> {
        self.trace.records.iter().enumerate()
    }

    fn content(&self, epoch: EpochId, pos: u64) -> Option<&EntryContent> {
        self.inner.get(&epoch)?.get(&pos)
    }

    fn genesis(&self) -> GenesisRecord {
        GenesisRecord {
            config: self.sc.epochs[0].config(),
        }
    }

    fn correct_emits(&self) -> impl Iterator<Item = (&ReplicaRef, &Vec<(usize, OuterLine)>)> {
        self.emits.iter().filter(|(r, _)| self.correct(r))
    }
}

/// The outer log a replica whose sanitizer stopped at `cursor` must hold,
/// computed from the inner logs alone.
pub fn oracle_outer_log(trace: &Trace, cursor: &Cursor) -> Vec<OuterLine> {
    let Some(sc) = trace.header() else {
        return Vec::new();
    };
    oracle_for(&View::new(trace, sc), cursor)
}

fn oracle_for(v: &View<'_>, cursor: &Cursor) -> Vec<OuterLine> {
    let Some(stop) = cursor.epoch else {
        return Vec::new();
    };
    let mut stream: Vec<(EpochId, u64, &EntryContent)> = Vec::new();
    let mut epoch = v.sc.epochs[0].config().epoch;
    loop {
        let log = v.inner.get(&epoch);
        let upto = if epoch == stop {
            cursor.ingested
        } else {
            match v.scans.get(&epoch).and_then(|s| s.cert.as_ref()) {
                Some((h, _, _)) => *h,
                None => break,
            }
        };
        for pos in 1..=upto {
            match log.and_then(|l| l.get(&pos)) {
                Some(c) => stream.push((epoch, pos, c)),
                None => break,
            }
        }
        if epoch == stop {
            break;
        }
        epoch = v.scans[&epoch]
            .cert
            .as_ref()
            .expect("checked above")
            .1
            .epoch;
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (epoch, pos, c) in stream {
        let EntryContent::Client { tx } = c else {
            continue;
        };
        if !seen.insert(tx.id) || !v.sc.exval.accepts(tx) {
            continue;
        }
        out.push(OuterLine {
            outer: out.len() as u64 + 1,
            tx: tx.id,
            src_epoch: epoch,
            src_pos: pos,
        });
    }
    out
}

type Check = fn(&View<'_>) -> Verdict;

pub fn verify(trace: &Trace) -> Report {
    let Some(sc) = trace.header() else {
        return Report {
            scenario: String::new(),
            seed: 0,
            end_time: 0,
            end_reason: "no header".into(),
            records: trace.records.len(),
            checks: vec![CheckResult {
                name: INTEGRITY,
                verdict: Verdict::fail(vec![], "trace has no header record"),
            }],
        };
    };
    let v = View::new(trace, sc);
    let end_reason = match trace.records.last() {
        Some(Record::End { reason, .. }) => reason.clone(),
        _ => "truncated".into(),
    };
    let checks: Vec<(&'static str, Check)> = vec![
        (SAFETY, check_safety),
        (INTEGRITY, check_integrity),
        (EXVAL, check_exval),
        (LIVENESS, check_liveness),
        (FAIRNESS, check_fairness),
        (ORACLE, check_oracle),
        (INNER_CONSISTENCY, check_inner_consistency),
        (UNIQUE_CERTIFICATES, check_unique_certs),
        (SINGLE_ACTIVE_EPOCH, check_single_active),
        (NO_PRE_QUORUM_SHUTDOWN, check_shutdown_quorum),
        (NO_POST_PREEMPTION_ACTIVATION, check_preemption),
        (PHASE_ORDER, check_phase_order),
        (TRUST_CHAIN, check_trust_chain),
        (ACTIVATION_QUORUM, check_activation_quorum),
        (HANDOVER_POINT, check_handover_point),
        (REPLICA_VIOLATIONS, check_replica_violations),
    ];
    Report {
        scenario: sc.name.clone(),
        seed: sc.seed,
        end_time: v.end_time,
        end_reason,
        records: trace.records.len(),
        checks: checks
            .into_iter()
            .map(|(name, f)| CheckResult {
                name,
                verdict: f(&v),
            })
            .collect(),
    }
}

fn check_safety(v: &View<'_>) -> Verdict {
    let Some((longest_r, longest)) = v.correct_emits().max_by_key(|(_, e)| e.len()) else {
        return Verdict::Pass;
    };
    for (r, log) in v.correct_emits() {
        for (k, (i, line)) in log.iter().enumerate() {
            let (j, other) = &longest[k];
            if (line.tx, line.src_epoch, line.src_pos) != (other.tx, other.src_epoch, other.src_pos)
            {
                return Verdict::fail(
                    vec![*i, *j],
                    format!(
                        "outer position {} differs between {r} and {longest_r}",
                        k + 1
                    ),
                );
            }
        }
    }
    Verdict::Pass
}

fn check_integrity(v: &View<'_>) -> Verdict {
    let submitted: HashSet<TxId> = v
        .records()
        .filter_map(|(_, r)| match r {
            Record::ClientSubmit { tx, .. } => Some(*tx),
            _ => None,
        })
        .collect();
    for (r, log) in v.correct_emits() {
        let mut ids = HashSet::new();
        for (k, (i, line)) in log.iter().enumerate() {
            if line.outer != k as u64 + 1 {
                return Verdict::fail(
                    vec![*i],
                    format!(
                        "{r} emitted outer position {} at index {}",
                        line.outer,
                        k + 1
                    ),
                );
            }
            if !ids.insert(line.tx) {
                return Verdict::fail(vec![*i], format!("{r} emitted {} twice", short(line.tx)));
            }
            if !submitted.contains(&line.tx) {
                return Verdict::fail(
                    vec![*i],
                    format!("{r} emitted {} which no client submitted", short(line.tx)),
                );
            }
            match v.content(line.src_epoch, line.src_pos) {
                Some(EntryContent::Client { tx })
                    if tx.id == line.tx && tx.id_matches_payload() => {}
                _ => {
                    let at = v.inner_idx.get(&(line.src_epoch, line.src_pos)).copied();
                    return Verdict::fail(
                        std::iter::once(*i).chain(at).collect(),
                        format!(
                            "{r} emitted {} from {}:{} which does not hold it",
                            short(line.tx),
                            line.src_epoch,
                            line.src_pos
                        ),
                    );
                }
            }
        }
    }
    Verdict::Pass
}

fn check_exval(v: &View<'_>) -> Verdict {
    for (r, log) in v.correct_emits() {
        for (i, line) in log {
            if let Some(EntryContent::Client { tx }) = v.content(line.src_epoch, line.src_pos) {
                if !v.sc.exval.accepts(tx) {
                    return Verdict::fail(
                        vec![*i],
                        format!(
                            "{r} emitted {:?}, rejected by the validity predicate",
                            tx.label()
                        ),
                    );
                }
            }
        }
    }
    Verdict::Pass
}

fn final_epoch(v: &View<'_>) -> EpochId {
    v.records()
        .filter_map(|(_, r)| match r {
            Record::Activated { epoch, .. } => Some(*epoch),
            _ => None,
        })
        .max()
        .unwrap_or(v.sc.epochs[0].config().epoch)
}

fn check_liveness(v: &View<'_>) -> Verdict {
    if v.sc.over_threshold() {
        return Verdict::NotApplicable {
            reason: "more faulty replicas than an epoch tolerates".into(),
        };
    }
    let last = final_epoch(v);
    let targets: Vec<&Cursor> = v
        .cursors
        .values()
        .filter(|c| {
            c.replica.epoch() == last
                && v.correct(&c.replica)
                && !c.crashed
                && !matches!(c.phase, Phase::Idle | Phase::ShutDown | Phase::Aborted)
        })
        .collect();
    if targets.is_empty() {
        return Verdict::fail(
            vec![v.trace.records.len() - 1],
            format!("no correct running replica in {last}"),
        );
    }
    let cutoff = v.end_time.saturating_sub(v.sc.liveness_slack());
    let mut owed: BTreeMap<TxId, (usize, String)> = BTreeMap::new();
    let mut abandoned = HashSet::new();
    for (i, r) in v.records() {
        if let Record::ClientSubmit {
            t,
            tx,
            label,
            abandon_on_loss,
            ..
        } = r
        {
            if *abandon_on_loss {
                abandoned.insert(*tx);
            }
            let probe = Transaction::new(label.as_bytes().to_vec(), ClientId(0));
            if *t <= cutoff && v.sc.exval.accepts(&probe) {
                owed.entry(*tx).or_insert((i, label.clone()));
            }
        }
    }
    for c in targets {
        let have: HashSet<TxId> = v
            .emits
            .get(&c.replica)
            .map_or_else(HashSet::new, |l| l.iter().map(|(_, x)| x.tx).collect());
        for (tx, (i, label)) in &owed {
            if !abandoned.contains(tx) && !have.contains(tx) {
                return Verdict::fail(
                    vec![*i],
                    format!("{label:?} never reached the outer log of {}", c.replica),
                );
            }
        }
    }
    Verdict::Pass
}

fn check_fairness(v: &View<'_>) -> Verdict {
    if !v.sc.trace_messages {
        return Verdict::NotApplicable {
            reason: "message events not traced".into(),
        };
    }
    let mut sends: BTreeMap<u64, (usize, u64, ReplicaRef)> = BTreeMap::new();
    let mut handled: HashMap<u64, (usize, u64, bool)> = HashMap::new();
    for (i, r) in v.records() {
        match r {
            Record::Send { id, due, to, .. } => {
                sends.insert(*id, (i, *due, *to));
            }
            Record::Deliver { t, id } => {
                handled.insert(*id, (i, *t, true));
            }
            Record::Drop { t, id, .. } => {
                handled.insert(*id, (i, *t, false));
            }
            _ => {}
        }
    }
    for (id, (i, due, to)) in &sends {
        // events sharing the final tick may still be queued when the run stops
        if *due > v.end_time || (*due == v.end_time && !handled.contains_key(id)) {
            continue;
        }
        match handled.get(id) {
            None => {
                return Verdict::fail(
                    vec![*i],
                    format!("message {id} to {to} due at {due} never delivered"),
                )
            }
            Some((j, t, _)) if t != due => {
                return Verdict::fail(
                    vec![*i, *j],
                    format!("message {id} due at {due} handled at {t}"),
                )
            }
            Some((j, _, false)) if !v.cursors.get(to).is_some_and(|c| c.crashed) => {
                return Verdict::fail(
                    vec![*i, *j],
                    format!("message {id} dropped although {to} is up"),
                )
            }
            _ => {}
        }
    }
    Verdict::Pass
}

fn check_oracle(v: &View<'_>) -> Verdict {
    for c in v.cursors.values().filter(|c| v.correct(&c.replica)) {
        let want = oracle_for(v, c);
        let got: Vec<OuterLine> = v
            .emits
            .get(&c.replica)
            .map_or_else(Vec::new, |l| l.iter().map(|(_, x)| *x).collect());
        if want != got {
            let k = want.iter().zip(&got).take_while(|(a, b)| a == b).count();
            let at = v
                .emits
                .get(&c.replica)
                .and_then(|l| l.get(k))
                .map(|(i, _)| *i);
            return Verdict::fail(
                at.into_iter().collect(),
                format!(
                    "{} outer log ({} entries) departs from the oracle ({} entries) at position {}",
                    c.replica,
                    got.len(),
                    want.len(),
                    k + 1
                ),
            );
        }
    }
    Verdict::Pass
}

fn check_inner_consistency(v: &View<'_>) -> Verdict {
    let mut next: HashMap<(ReplicaRef, EpochId), u64> = HashMap::new();
    for (i, r) in v.records() {
        let Record::InnerRelease {
            r,
            epoch,
            pos,
            digest,
            ..
        } = r
        else {
            continue;
        };
        if !v.correct(r) {
            continue;
        }
        let expect = next.entry((*r, *epoch)).or_insert(1);
        if *pos != *expect {
            return Verdict::fail(vec![i], format!("{r} released {epoch}:{pos} out of order"));
        }
        *expect += 1;
        let Some(c) = v.content(*epoch, *pos) else {
            return Verdict::fail(vec![i], format!("{epoch}:{pos} has no recorded content"));
        };
        if c.digest() != *digest {
            let first = v.inner_idx[&(*epoch, *pos)];
            return Verdict::fail(
                vec![first, i],
                format!("{r} released different content at {epoch}:{pos}"),
            );
        }
    }
    Verdict::Pass
}

fn certificates(v: &View<'_>) -> BTreeMap<EpochId, Vec<(usize, ReplicaRef, HandoverCertificate)>> {
    let mut m: BTreeMap<EpochId, Vec<_>> = BTreeMap::new();
    for (i, r) in v.records() {
        if let Record::Certificate { r, cert, .. } = r {
            if v.correct(r) {
                m.entry(cert.old_epoch)
                    .or_default()
                    .push((i, *r, cert.clone()));
            }
        }
    }
    m
}

fn check_unique_certs(v: &View<'_>) -> Verdict {
    for (epoch, certs) in certificates(v) {
        let (i0, r0, c0) = &certs[0];
        for (i, r, c) in &certs[1..] {
            if c != c0 {
                return Verdict::fail(
                    vec![*i0, *i],
                    format!("{r0} and {r} hold different certificates for {epoch}"),
                );
            }
        }
    }
    Verdict::Pass
}

fn check_single_active(v: &View<'_>) -> Verdict {
    for (r, log) in v.correct_emits() {
        for w in log.windows(2) {
            if w[1].1.src_epoch < w[0].1.src_epoch {
                return Verdict::fail(
                    vec![w[0].0, w[1].0],
                    format!(
                        "{r} went back to {} after {}",
                        w[1].1.src_epoch, w[0].1.src_epoch
                    ),
                );
            }
        }
    }
    let successor: HashMap<EpochId, EpochId> = v
        .scans
        .iter()
        .filter_map(|(e, s)| s.cert.as_ref().map(|(_, next, _)| (*e, next.epoch)))
        .collect();
    let mut last: HashMap<ReplicaRef, EpochId> = HashMap::new();
    for (i, rec) in v.records() {
        let Record::EpochMarker { r, epoch, .. } = rec else {
            continue;
        };
        if !v.correct(r) {
            continue;
        }
        if !successor.values().any(|e| e == epoch) {
            return Verdict::fail(
                vec![i],
                format!("{r} moved to {epoch}, which no handover names"),
            );
        }
        if let Some(prev) = last.insert(*r, *epoch) {
            if successor.get(&prev) != Some(epoch) {
                return Verdict::fail(
                    vec![i],
                    format!("{r} moved from {prev} to {epoch}, skipping the handover chain"),
                );
            }
        }
    }
    Verdict::Pass
}

/// Distinct old members with a valid Done over exactly `cert` among the first `upto` positions of `log`.
fn matching_dones(
    old: &EpochConfig,
    cert: &HandoverCertificate,
    log: Option<&BTreeMap<u64, EntryContent>>,
    upto: u64,
) -> usize {
    let want = cert.digest();
    let mut signers = BTreeSet::new();
    for (_, c) in log.into_iter().flat_map(|l| l.range(1..=upto)) {
        if let EntryContent::System {
            tx: SystemTx::Done(d),
        } = c
        {
            if d.cert.digest() == want && old.contains(&d.signer) && d.verify() {
                signers.insert(d.signer);
            }
        }
    }
    signers.len()
}

fn check_shutdown_quorum(v: &View<'_>) -> Verdict {
    let certs = certificates(v);
    for (i, rec) in v.records() {
        let Record::Halt {
            r, epoch, at_pos, ..
        } = rec
        else {
            continue;
        };
        if !v.correct(r) {
            continue;
        }
        let Some(cert) = certs
            .get(epoch)
            .and_then(|c| c.iter().find(|(_, who, _)| who == r))
            .map(|(_, _, c)| c)
        else {
            return Verdict::fail(vec![i], format!("{r} halted without a certificate"));
        };
        let old = &v.configs[epoch];
        let n = matching_dones(old, cert, v.inner.get(&cert.next_config.epoch), *at_pos);
        if n < old.attest_quorum() {
            return Verdict::fail(
                vec![i],
                format!(
                    "{r} halted after {n} matching Done, {} required",
                    old.attest_quorum()
                ),
            );
        }
    }
    Verdict::Pass
}

fn check_preemption(v: &View<'_>) -> Verdict {
    let preempted: HashSet<EpochId> = v
        .scans
        .values()
        .flat_map(|s| {
            s.changes
                .iter()
                .filter(|c| c.2.is_some())
                .map(|c| c.1.next.epoch)
        })
        .collect();
    let handed: HashSet<EpochId> = v
        .scans
        .values()
        .filter_map(|s| s.cert.as_ref().map(|c| c.1.epoch))
        .collect();
    for (i, rec) in v.records() {
        if let Record::Activated { r, epoch, .. } = rec {
            if preempted.contains(epoch) && !handed.contains(epoch) {
                return Verdict::fail(
                    vec![i],
                    format!("{r} activated {epoch} after it was preempted"),
                );
            }
            if !handed.contains(epoch) {
                return Verdict::fail(
                    vec![i],
                    format!("{r} activated {epoch} but no inner log hands over to it"),
                );
            }
        }
    }
    Verdict::Pass
}

fn check_phase_order(v: &View<'_>) -> Verdict {
    let genesis = v.sc.epochs[0].epoch;
    let mut cur: HashMap<ReplicaRef, Phase> = HashMap::new();
    for (i, rec) in v.records() {
        let Record::Phase { r, from, to, .. } = rec else {
            continue;
        };
        if !v.correct(r) {
            continue;
        }
        let initial = if r.0 == genesis {
            Phase::Active
        } else {
            Phase::Idle
        };
        let now = cur.get(r).copied().unwrap_or(initial);
        if *from != now {
            return Verdict::fail(
                vec![i],
                format!("{r} claims to leave {from:?} while in {now:?}"),
            );
        }
        if !to.can_follow(*from) {
            return Verdict::fail(vec![i], format!("{r} moved {from:?} -> {to:?}"));
        }
        cur.insert(*r, *to);
    }
    for c in v.cursors.values().filter(|c| v.correct(&c.replica)) {
        let initial = if c.replica.0 == genesis {
            Phase::Active
        } else {
            Phase::Idle
        };
        let now = cur.get(&c.replica).copied().unwrap_or(initial);
        if now != c.phase {
            return Verdict::fail(
                vec![v.trace.records.len() - 1],
                format!("{} ends in {:?}, trace says {now:?}", c.replica, c.phase),
            );
        }
    }
    Verdict::Pass
}

fn activation_links(v: &View<'_>) -> BTreeMap<EpochId, (usize, ChainLink)> {
    let mut links = BTreeMap::new();
    for (i, rec) in v.records() {
        if let Record::Activated { r, epoch, link, .. } = rec {
            if v.correct(r) {
                links.entry(*epoch).or_insert((i, link.clone()));
            }
        }
    }
    links
}

fn check_trust_chain(v: &View<'_>) -> Verdict {
    let links = activation_links(v);
    if links.is_empty() {
        return Verdict::NotApplicable {
            reason: "no epoch was activated".into(),
        };
    }
    let idx: Vec<usize> = links.values().map(|(i, _)| *i).collect();
    let chain: Vec<ChainLink> = links.into_values().map(|(_, l)| l).collect();
    match verify_trust_chain(&chain, &v.genesis()) {
        Ok(()) => Verdict::Pass,
        Err(b) => Verdict::fail(
            idx.get(b.index.saturating_sub(1))
                .copied()
                .into_iter()
                .collect(),
            format!(
                "chain of {} links broken at link {}: {}",
                chain.len(),
                b.index,
                b.reason
            ),
        ),
    }
}

fn check_activation_quorum(v: &View<'_>) -> Verdict {
    for (i, rec) in v.records() {
        let Record::Activated {
            r,
            epoch,
            at_pos,
            link,
            ..
        } = rec
        else {
            continue;
        };
        if !v.correct(r) {
            continue;
        }
        let Some(old) = v.configs.get(&link.cert.old_epoch) else {
            return Verdict::fail(
                vec![i],
                format!("{r} activated from unknown {}", link.cert.old_epoch),
            );
        };
        let q = old.attest_quorum();
        let want = link.cert.digest();
        let valid: BTreeSet<ReplicaId> = link
            .signatures
            .iter()
            .filter(|d: &&Done| d.cert.digest() == want && old.contains(&d.signer) && d.verify())
            .map(|d| d.signer)
            .collect();
        if link.cert.next_config.epoch != *epoch || valid.len() != q || link.signatures.len() != q {
            return Verdict::fail(
                vec![i],
                format!(
                    "{r} activated with {} valid of {} Done signatures, exactly {q} required",
                    valid.len(),
                    link.signatures.len()
                ),
            );
        }
        let ordered = matching_dones(old, &link.cert, v.inner.get(epoch), *at_pos);
        if ordered < q {
            return Verdict::fail(
                vec![i],
                format!("{r} activated after {ordered} ordered matching Done, {q} required"),
            );
        }
    }
    Verdict::Pass
}

fn check_handover_point(v: &View<'_>) -> Verdict {
    for (epoch, certs) in certificates(v) {
        let scan = v.scans.get(&epoch).and_then(|s| s.cert.as_ref());
        for (i, r, c) in certs {
            match scan {
                Some((h, next, _)) if *h == c.h && *next == c.next_config => {}
                Some((h, _, _)) => {
                    return Verdict::fail(
                        vec![i],
                        format!("{r} cut {epoch} at h={}, the inner log gives h={h}", c.h),
                    )
                }
                None => {
                    return Verdict::fail(
                        vec![i],
                        format!(
                            "{r} holds a certificate for {epoch} the inner log does not support"
                        ),
                    )
                }
            }
        }
    }
    Verdict::Pass
}

fn check_replica_violations(v: &View<'_>) -> Verdict {
    for (i, rec) in v.records() {
        if let Record::Violation { r, message, .. } = rec {
            if v.correct(r) {
                return Verdict::fail(vec![i], format!("{r}: {message}"));
            }
        }
    }
    Verdict::Pass
}

fn short(tx: TxId) -> String {
    tx.0.to_hex()[..12].to_string()
}
