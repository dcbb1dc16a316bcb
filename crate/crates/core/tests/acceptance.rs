//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use reconf::batch::{map_many, run_and_verify, run_many, run_many_sequential};
use reconf::engine::{verify_trust_chain, ChainLink, Phase};
use reconf::experiments;
use reconf::metrics::phase_breakdown;
use reconf::model::codec::Encode;
use reconf::model::{
    ConsensusKind, EntryContent, EpochId, ExvalPolicy, GenesisRecord, Hash, SystemTx, TxId,
};
use reconf::report::{outer_log_export, replica_outer_log};
use reconf::sim::random::random_scenario;
use reconf::sim::{run, Record, ReplicaRef, Scenario, ScheduledEvent, Trace};
use reconf::verify::{self as checks, oracle_outer_log, scan_epoch, verify, Report};

const GOLDEN_BUDGET: Duration = Duration::from_secs(5);
const SUITE_BUDGET: Duration = Duration::from_secs(600);
const SUITE_SEEDS: u64 = 500;
const MAX_SCALING_RATIO: f64 = 2.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($fmt)+));
            }
        }
    };
}

fn load(name: &str) -> Scenario {
    experiments::load(name).unwrap_or_else(|e| panic!("bundled experiment {name}: {e}"))
}

fn inner_logs(trace: &Trace) -> BTreeMap<EpochId, BTreeMap<u64, EntryContent>> {
    let mut m: BTreeMap<EpochId, BTreeMap<u64, EntryContent>> = BTreeMap::new();
    for r in &trace.records {
        if let Record::InnerEntry {
            epoch,
            pos,
            content,
            ..
        } = r
        {
            m.entry(*epoch).or_default().insert(*pos, content.clone());
        }
    }
    m
}

fn labels(trace: &Trace) -> HashMap<TxId, String> {
    trace
        .records
        .iter()
        .filter_map(|r| match r {
            Record::ClientSubmit { tx, label, .. } => Some((*tx, label.clone())),
            _ => None,
        })
        .collect()
}

fn outer_labels(trace: &Trace, replica: ReplicaRef) -> Vec<String> {
    let names = labels(trace);
    replica_outer_log(trace, replica)
        .iter()
        .map(|l| names.get(&l.tx).cloned().unwrap_or_default())
        .collect()
}

fn correct(trace: &Trace) -> Vec<ReplicaRef> {
    trace
        .cursors()
        .iter()
        .filter(|c| !c.byzantine)
        .map(|c| c.replica)
        .collect()
}

fn client_label(c: &EntryContent) -> Option<String> {
    match c {
        EntryContent::Client { tx } => Some(tx.label()),
        _ => None,
    }
}

fn done_digest(c: &EntryContent) -> Option<Hash> {
    match c {
        EntryContent::System {
            tx: SystemTx::Done(d),
        } => Some(d.cert.digest()),
        _ => None,
    }
}

fn first_links(trace: &Trace) -> BTreeMap<EpochId, (u64, u64, ChainLink)> {
    let byz: HashSet<ReplicaRef> = trace
        .cursors()
        .iter()
        .filter(|c| c.byzantine)
        .map(|c| c.replica)
        .collect();
    let mut m = BTreeMap::new();
    for r in &trace.records {
        if let Record::Activated {
            t,
            r,
            epoch,
            at_pos,
            link,
        } = r
        {
            if !byz.contains(r) {
                m.entry(*epoch).or_insert((*t, *at_pos, link.clone()));
            }
        }
    }
    m
}

fn all_pass(rep: &Report) -> Outcome {
    ensure!(
        rep.passed(),
        "verdicts failed: {}",
        rep.failures()
            .iter()
            .map(|c| c.name)
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(String::new())
}

fn golden_example() -> Outcome {
    let t0 = Instant::now();
    let (trace, rep) = run_and_verify(&load("worked_example"));
    let elapsed = t0.elapsed();
    all_pass(&rep)?;
    let want = ["T1", "T2", "T3", "T4", "T5", "T7", "T8"];
    let mut full = 0;
    for r in correct(&trace) {
        let got = outer_labels(&trace, r);
        if r.0 == 2 {
            ensure!(got == want, "{r} outer log {got:?}");
            full += 1;
        } else {
            ensure!(
                got.iter().zip(want).all(|(a, b)| a == b) && got.len() <= want.len(),
                "{r} outer log {got:?} is not a prefix"
            );
        }
    }
    ensure!(
        full == 4,
        "{full} incoming replicas hold the full outer log"
    );

    let logs = inner_logs(&trace);
    let l1 = &logs[&EpochId(1)];
    let scan = scan_epoch(EpochId(1), l1);
    ensure!(
        scan.changes.first().map(|c| c.0) == Some(3),
        "EpochChange at {:?}",
        scan.changes.first().map(|c| c.0)
    );
    let h = scan.cert.as_ref().map(|c| c.0);
    ensure!(h == Some(9), "h = {h:?}");

    let names = labels(&trace);
    for r in &trace.records {
        if let Record::Emit {
            r, tx, src_epoch, ..
        } = r
        {
            let l = names.get(tx).map(String::as_str).unwrap_or("");
            ensure!(
                !(src_epoch.0 == 1 && (l == "T5" || l == "T6")),
                "{r} emitted {l} from epoch 1"
            );
        }
    }
    let l2 = &logs[&EpochId(2)];
    ensure!(
        done_digest(&l2[&1]).is_some() && done_digest(&l2[&2]).is_some(),
        "L2 does not open with two Done"
    );
    ensure!(
        client_label(&l2[&3]).as_deref() == Some("T5"),
        "L2[3] = {}",
        l2[&3].short()
    );
    let act = first_links(&trace).get(&EpochId(2)).map(|a| a.1);
    ensure!(act == Some(2), "first activation at L2 position {act:?}");
    ensure!(elapsed < GOLDEN_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "outer={} h=9 activation after L2[2], {elapsed:.2?}",
        want.join(",")
    ))
}

struct SuiteRun {
    seed: u64,
    failures: Vec<&'static str>,
    export_mismatch: Option<String>,
}

fn randomized_suite() -> Outcome {
    let t0 = Instant::now();
    let scenarios: Vec<Scenario> = (0..SUITE_SEEDS).map(random_scenario).collect();
    let runs = map_many(&scenarios, |sc| {
        let trace = run(sc);
        let rep = verify(&trace);
        let mut export_mismatch = None;
        for c in trace.cursors().iter().filter(|c| !c.byzantine) {
            let oracle = outer_log_export(&oracle_outer_log(&trace, c));
            let got = outer_log_export(&replica_outer_log(&trace, c.replica));
            if oracle != got {
                export_mismatch = Some(c.replica.to_string());
                break;
            }
        }
        SuiteRun {
            seed: sc.seed,
            failures: rep.failures().iter().map(|c| c.name).collect(),
            export_mismatch,
        }
    });
    let elapsed = t0.elapsed();
    let core = [checks::SAFETY, checks::INTEGRITY, checks::EXVAL];
    let violations: Vec<u64> = runs
        .iter()
        .filter(|r| r.failures.iter().any(|f| core.contains(f)))
        .map(|r| r.seed)
        .collect();
    ensure!(
        violations.is_empty(),
        "safety/integrity/exval violations at seeds {violations:?}"
    );
    let mismatched: Vec<String> = runs
        .iter()
        .filter_map(|r| {
            r.export_mismatch
                .as_ref()
                .map(|m| format!("{}:{m}", r.seed))
        })
        .collect();
    ensure!(
        mismatched.is_empty(),
        "oracle export differs at {mismatched:?}"
    );
    let failing: Vec<String> = runs
        .iter()
        .filter(|r| !r.failures.is_empty())
        .map(|r| format!("{}:{:?}", r.seed, r.failures))
        .collect();
    ensure!(failing.is_empty(), "other failing verdicts {failing:?}");
    ensure!(elapsed < SUITE_BUDGET, "took {elapsed:?}");
    Ok(format!(
        "{} scenarios, 0 violations, oracle byte-equal, {elapsed:.2?}",
        runs.len()
    ))
}

fn cross_protocol() -> Outcome {
    let sc = load("cross_protocol");
    let kinds: Vec<ConsensusKind> = sc.epochs.iter().map(|e| e.consensus).collect();
    ensure!(
        kinds
            == [
                ConsensusKind::Sequencer,
                ConsensusKind::MultiLane,
                ConsensusKind::Sequencer
            ],
        "epoch protocols {kinds:?}"
    );
    let (trace, rep) = run_and_verify(&sc);
    all_pass(&rep)?;
    let chain: Vec<ChainLink> = first_links(&trace)
        .into_values()
        .map(|(_, _, l)| l)
        .collect();
    verify_trust_chain(
        &chain,
        &GenesisRecord {
            config: sc.epochs[0].config(),
        },
    )
    .map_err(|b| format!("{b:?}"))?;
    ensure!(
        chain.len() == 2,
        "trust chain holds {} certificates",
        chain.len()
    );
    Ok("Sequencer->MultiLane->Sequencer, 2 valid certificates".into())
}

fn post_h_truncation() -> Outcome {
    let (trace, rep) = run_and_verify(&load("post_h_commits"));
    all_pass(&rep)?;
    let logs = inner_logs(&trace);
    let l1 = &logs[&EpochId(1)];
    let h = scan_epoch(EpochId(1), l1)
        .cert
        .map(|c| c.0)
        .ok_or("no handover in epoch 1")?;
    let past: Vec<(u64, TxId)> = l1
        .range(h + 1..)
        .filter_map(|(p, c)| match c {
            EntryContent::Client { tx } => Some((*p, tx.id)),
            _ => None,
        })
        .collect();
    ensure!(past.len() >= 2, "{} client entries past h={h}", past.len());
    let ordered_at: HashMap<(EpochId, u64), u64> = trace
        .records
        .iter()
        .filter_map(|r| match r {
            Record::InnerEntry { t, epoch, pos, .. } => Some(((*epoch, *pos), *t)),
            _ => None,
        })
        .collect();
    for (pos, tx) in &past {
        let t_old = ordered_at[&(EpochId(1), *pos)];
        let resubmit = trace.records.iter().find_map(|r| match r {
            Record::ClientSubmit { t, tx: id, to, .. } if id == tx && *t > t_old && to.0 == 2 => {
                Some(*t)
            }
            _ => None,
        });
        let Some(t_re) = resubmit else {
            return Err(format!("entry at L1[{pos}] never resubmitted to epoch 2"));
        };
        for r in &trace.records {
            if let Record::Emit {
                t,
                r,
                tx: id,
                src_epoch,
                ..
            } = r
            {
                if id == tx {
                    ensure!(
                        src_epoch.0 == 2,
                        "{r} emitted L1[{pos}] from epoch {}",
                        src_epoch.0
                    );
                    ensure!(*t > t_re, "{r} emitted L1[{pos}] before its resubmission");
                }
            }
        }
        for r in correct(&trace).into_iter().filter(|r| r.0 == 2) {
            let n = replica_outer_log(&trace, r)
                .iter()
                .filter(|l| l.tx == *tx)
                .count();
            ensure!(n == 1, "{r} holds L1[{pos}] {n} times");
        }
    }
    Ok(format!(
        "{} entries past h={h}, each emitted once from epoch 2 after resubmission",
        past.len()
    ))
}

fn preemption() -> Outcome {
    let sc = load("preemption");
    let crashed_incoming = sc
        .schedule
        .iter()
        .any(|e| matches!(e, ScheduledEvent::Crash { replica, .. } if replica.0 == 2));
    ensure!(crashed_incoming, "scenario has no crashed incoming member");
    let (trace, rep) = run_and_verify(&sc);
    all_pass(&rep)?;
    ensure!(
        rep.verdict(checks::NO_POST_PREEMPTION_ACTIVATION) == Some(&checks::Verdict::Pass),
        "preemption check"
    );
    let links = first_links(&trace);
    ensure!(!links.contains_key(&EpochId(2)), "epoch 2 activated");
    ensure!(
        links.contains_key(&EpochId(3)),
        "second transition never completed"
    );
    ensure!(
        trace
            .cursors()
            .iter()
            .filter(|c| c.replica.0 == 2 && !c.crashed)
            .all(|c| c.phase == Phase::Aborted),
        "epoch 2 members did not abort"
    );
    Ok("epoch 2 never activated, epoch 3 active".into())
}

fn quorum_boundaries() -> Outcome {
    let sc = load("equivocation");
    let old = sc.epochs[0].config();
    let f = sc.epochs[0].f as usize;
    let equivocators = sc
        .schedule
        .iter()
        .filter(|e| matches!(e, ScheduledEvent::EquivocateDone { replica } if replica.0 == 1))
        .count();
    ensure!(
        equivocators == f,
        "{equivocators} equivocating members, f={f}"
    );
    let (trace, rep) = run_and_verify(&sc);
    all_pass(&rep)?;
    let (_, at_pos, link) = first_links(&trace)
        .remove(&EpochId(2))
        .ok_or("epoch 2 never activated")?;
    ensure!(
        link.signatures.len() == f + 1 && old.attest_quorum() == f + 1,
        "link has {} signatures",
        link.signatures.len()
    );
    let want = link.cert.digest();
    let l2 = &inner_logs(&trace)[&EpochId(2)];
    let count = |upto: u64, matching: bool| {
        l2.range(1..=upto)
            .filter_map(|(_, c)| done_digest(c))
            .filter(|d| (*d == want) == matching)
            .count()
    };
    ensure!(
        count(at_pos, true) == f + 1,
        "{} matching Done at activation",
        count(at_pos, true)
    );
    ensure!(
        count(at_pos - 1, true) == f,
        "{} matching Done before activation",
        count(at_pos - 1, true)
    );
    ensure!(
        count(at_pos - 1, false) == f,
        "{} conflicting Done before activation",
        count(at_pos - 1, false)
    );
    let quorum_at = trace
        .records
        .iter()
        .find_map(|r| match r {
            Record::InnerEntry { t, epoch, pos, .. } if epoch.0 == 2 && *pos == at_pos => Some(*t),
            _ => None,
        })
        .ok_or("quorum entry missing")?;
    for r in &trace.records {
        match r {
            Record::Halt {
                t, r, at_pos: p, ..
            } => {
                ensure!(
                    *p >= at_pos && *t >= quorum_at,
                    "{r} halted at L2[{p}] t={t}"
                )
            }
            Record::Activated { t, r, .. } => ensure!(*t >= quorum_at, "{r} activated at t={t}"),
            _ => {}
        }
    }
    Ok(format!(
        "f={f}: no activation with {f} matching + {f} conflicting, activation on matching Done {}",
        f + 1
    ))
}

fn four_transitions() -> Outcome {
    let sc = load("four_transitions");
    let sizes: Vec<usize> = sc.epochs.iter().map(|e| e.config().n()).collect();
    ensure!(sizes == [4, 4, 7, 10, 13], "sizes {sizes:?}");
    let (trace, rep) = run_and_verify(&sc);
    all_pass(&rep)?;
    let phases = phase_breakdown(&trace);
    ensure!(phases.len() == 4, "{} completed transitions", phases.len());
    for b in &phases {
        ensure!(
            b.t2() > b.t1() && b.t2() > b.t3(),
            "{}->{}: t1={} t2={} t3={}",
            b.from.0,
            b.to.0,
            b.t1(),
            b.t2(),
            b.t3()
        );
    }
    let min = phases.iter().map(|b| b.total()).min().unwrap_or(0) as f64;
    let max = phases.iter().map(|b| b.total()).max().unwrap_or(0) as f64;
    let ratio = max / min;
    ensure!(ratio < MAX_SCALING_RATIO, "totals vary {ratio:.2}x");
    let totals: Vec<String> = phases
        .iter()
        .map(|b| format!("{}->{}:{}", b.n_old, b.n_new, b.total()))
        .collect();
    Ok(format!(
        "t2 dominant, totals [{}], spread {ratio:.2}x",
        totals.join(" ")
    ))
}

fn determinism() -> Outcome {
    let mut scenarios = vec![
        load("worked_example"),
        load("cross_protocol"),
        load("equivocation"),
    ];
    scenarios.extend([3, 17, 256].map(random_scenario));
    for sc in &scenarios {
        let (a, ra) = run_and_verify(sc);
        let (b, rb) = run_and_verify(sc);
        ensure!(a.to_jsonl() == b.to_jsonl(), "{}: traces differ", sc.name);
        ensure!(ra.to_text() == rb.to_text(), "{}: reports differ", sc.name);
        let back = Trace::parse(&a.to_jsonl()).map_err(|e| e.to_string())?;
        ensure!(
            verify(&back).to_text() == ra.to_text(),
            "{}: report changes after JSONL round trip",
            sc.name
        );
    }
    let seeds: Vec<Scenario> = (40..60).map(random_scenario).collect();
    ensure!(
        run_many(&seeds) == run_many_sequential(&seeds),
        "parallel and sequential batches differ"
    );
    Ok(format!(
        "{} scenarios byte-identical, parallel == sequential",
        scenarios.len()
    ))
}

/// Applies `edit` to every record; `keep` returning false drops a record.
fn forge(trace: &Trace, mut edit: impl FnMut(&mut Record) -> bool) -> Trace {
    let mut t = trace.clone();
    t.records.retain_mut(|r| edit(r));
    t
}

fn with_record(trace: &Trace, extra: Record) -> Trace {
    let mut t = trace.clone();
    let end = t.records.pop().expect("end record");
    t.records.push(extra);
    t.records.push(end);
    t
}

fn negative_controls() -> Outcome {
    let golden = load("worked_example");
    let (good, rep) = run_and_verify(&golden);
    all_pass(&rep)?;
    let (pre, pre_rep) = run_and_verify(&load("preemption"));
    all_pass(&pre_rep)?;
    let names = labels(&good);
    let id_of = |l: &str| {
        *names
            .iter()
            .find(|(_, v)| v.as_str() == l)
            .expect("label")
            .0
    };
    let (t1, t2, t8) = (id_of("T1"), id_of("T2"), id_of("T8"));
    let r5 = ReplicaRef(2, 5);
    let end = good.end_time();
    let mut fixtures: Vec<(&str, &str, Trace)> = Vec::new();

    fixtures.push((
        "swapped emits",
        checks::SAFETY,
        forge(&good, |r| {
            if let Record::Emit { r, tx, .. } = r {
                if *r == r5 && (*tx == t1 || *tx == t2) {
                    *tx = if *tx == t1 { t2 } else { t1 };
                }
            }
            true
        }),
    ));
    fixtures.push((
        "unsubmitted emit",
        checks::INTEGRITY,
        forge(&good, |r| {
            if let Record::Emit { tx, .. } = r {
                if *tx == t8 {
                    *tx = TxId::of_payload(b"forged");
                }
            }
            true
        }),
    ));
    fixtures.push((
        "rejected emit",
        checks::EXVAL,
        forge(&good, |r| {
            if let Record::Header { scenario, .. } = r {
                scenario.exval = ExvalPolicy::RejectMarker {
                    marker: "T7".into(),
                };
            }
            true
        }),
    ));
    fixtures.push((
        "lost transaction",
        checks::LIVENESS,
        forge(
            &good,
            |r| !matches!(r, Record::Emit { tx, .. } if *tx == t1),
        ),
    ));
    let mut dropped = false;
    fixtures.push((
        "missing delivery",
        checks::FAIRNESS,
        forge(&good, |r| {
            let hit = !dropped && matches!(r, Record::Deliver { .. });
            dropped |= hit;
            !hit
        }),
    ));
    fixtures.push((
        "short outer log",
        checks::ORACLE,
        forge(
            &good,
            |r| !matches!(r, Record::Emit { r, tx, .. } if *r == r5 && *tx == t8),
        ),
    ));
    let mut moved = false;
    fixtures.push((
        "out-of-order release",
        checks::INNER_CONSISTENCY,
        forge(&good, |r| {
            if let Record::InnerRelease { pos, .. } = r {
                if !moved {
                    *pos += 1;
                    moved = true;
                }
            }
            true
        }),
    ));
    let mut bumped = false;
    fixtures.push((
        "conflicting certificates",
        checks::UNIQUE_CERTIFICATES,
        forge(&good, |r| {
            if let Record::Certificate { cert, .. } = r {
                if !bumped {
                    cert.h += 1;
                    bumped = true;
                }
            }
            true
        }),
    ));
    fixtures.push((
        "wrong handover point",
        checks::HANDOVER_POINT,
        forge(&good, |r| {
            if let Record::Certificate { cert, .. } = r {
                cert.h -= 1;
            }
            true
        }),
    ));
    fixtures.push((
        "unannounced epoch",
        checks::SINGLE_ACTIVE_EPOCH,
        with_record(
            &good,
            Record::EpochMarker {
                t: end,
                r: r5,
                epoch: EpochId(3),
            },
        ),
    ));
    fixtures.push((
        "early halt",
        checks::NO_PRE_QUORUM_SHUTDOWN,
        forge(&good, |r| {
            if let Record::Halt { at_pos, .. } = r {
                *at_pos = 1;
            }
            true
        }),
    ));
    let stale = pre.records.iter().find_map(|r| match r {
        Record::Activated { .. } => {
            let mut c = r.clone();
            if let Record::Activated { epoch, r, .. } = &mut c {
                *epoch = EpochId(2);
                *r = ReplicaRef(2, 5);
            }
            Some(c)
        }
        _ => None,
    });
    fixtures.push((
        "activation after preemption",
        checks::NO_POST_PREEMPTION_ACTIVATION,
        with_record(&pre, stale.ok_or("preemption run has no activation")?),
    ));
    let mut skipped = false;
    fixtures.push((
        "illegal phase step",
        checks::PHASE_ORDER,
        forge(&good, |rec| {
            if let Record::Phase { r, to, .. } = rec {
                if *r == r5 && !skipped {
                    *to = Phase::Active;
                    skipped = true;
                }
            }
            true
        }),
    ));
    fixtures.push((
        "broken chain",
        checks::TRUST_CHAIN,
        forge(&good, |r| {
            if let Record::Activated { link, .. } = r {
                link.cert.prev_cert_hash = link.cert.digest();
            }
            true
        }),
    ));
    fixtures.push((
        "missing Done signature",
        checks::ACTIVATION_QUORUM,
        forge(&good, |r| {
            if let Record::Activated { link, .. } = r {
                link.signatures.pop();
            }
            true
        }),
    ));
    fixtures.push((
        "reported violation",
        checks::REPLICA_VIOLATIONS,
        with_record(
            &good,
            Record::Violation {
                t: end,
                r: r5,
                message: "forged".into(),
            },
        ),
    ));

    for (what, check, trace) in &fixtures {
        let rep = verify(trace);
        ensure!(
            rep.verdict(check).is_some_and(|v| v.is_fail()),
            "{what}: {check} did not fail ({:?})",
            rep.verdict(check)
        );
    }

    // a correct replica running a different validity predicate
    let mut misconfigured = golden.clone();
    misconfigured.schedule.push(ScheduledEvent::ExvalOverride {
        replica: r5,
        exval: ExvalPolicy::RejectMarker {
            marker: "T7".into(),
        },
    });
    let rep = verify(&run(&misconfigured));
    ensure!(
        !rep.passed(),
        "misconfigured validity predicate went unnoticed"
    );
    let caught: Vec<&str> = rep.failures().iter().map(|c| c.name).collect();
    Ok(format!(
        "{} forged traces rejected by their check; exval override caught by {}",
        fixtures.len(),
        caught.join(",")
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("AC1", "golden example", golden_example),
        ("AC2", "randomized safety suite", randomized_suite),
        ("AC3", "cross-protocol transitions", cross_protocol),
        ("AC4", "post-h truncation", post_h_truncation),
        ("AC5", "preemption", preemption),
        ("AC6", "quorum boundaries", quorum_boundaries),
        ("AC7", "four transitions", four_transitions),
        ("AC8", "determinism", determinism),
        ("AC9", "negative controls", negative_controls),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match res {
            Ok(detail) => println!(
                "acceptance {id} {name}: PASS ({detail}) [{:.2?}]",
                t0.elapsed()
            ),
            Err(why) => {
                failed += 1;
                println!(
                    "acceptance {id} {name}: FAIL ({why}) [{:.2?}]",
                    t0.elapsed()
                );
            }
        }
    }
    println!("acceptance: {} criteria, {failed} failed", 9);
    if failed > 0 {
        std::process::exit(1);
    }
}
