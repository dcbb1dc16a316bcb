use std::collections::HashSet;

use proptest::prelude::*;

use reconf::engine::{DoneTally, Phase};
use reconf::model::codec::Encode;
use reconf::model::{
    hash_bytes, ClientId, ConsensusKind, Done, EntryContent, EpochConfig, EpochId, ExvalPolicy,
    FaultModel, HandoverCertificate, InnerLogEntry, Transaction,
};
use reconf::queue::EventQueue;
use reconf::sanitizer::SanitizerState;
use reconf::sim::random::{random_scenario_with, RandomParams};
use reconf::sim::run;
use reconf::verify::{verify, SAFETY};

const PHASES: [Phase; 7] = [
    Phase::Idle,
    Phase::AwaitingReady,
    Phase::HandoverFormed,
    Phase::AwaitingDone,
    Phase::Active,
    Phase::ShutDown,
    Phase::Aborted,
];

fn config(epoch: u64, f: u32) -> EpochConfig {
    EpochConfig::with_indices(
        EpochId(epoch),
        1..=3 * f + 1,
        f,
        FaultModel::Byzantine,
        ConsensusKind::Sequencer,
    )
}

fn cert(old: u64, h: u64) -> HandoverCertificate {
    HandoverCertificate {
        old_epoch: EpochId(old),
        next_config: config(old + 1, 1),
        h,
        prev_cert_hash: hash_bytes(b"prev"),
    }
}

/// `None` is a no-op, `Some(k)` the client transaction `tx{k}`.
fn content(slot: Option<u8>) -> EntryContent {
    match slot {
        Some(k) => EntryContent::Client {
            tx: Transaction::new(format!("tx{k}").into_bytes(), ClientId(0)),
        },
        None => EntryContent::Noop,
    }
}

/// Per epoch: entries, cutoff h, and how many entries are ingested before the handover is applied.
fn epochs() -> impl Strategy<Value = Vec<(Vec<Option<u8>>, u64, u64)>> {
    prop::collection::vec(
        prop::collection::vec(prop::option::weighted(0.8, 0u8..12), 1..14).prop_flat_map(
            |entries| {
                let len = entries.len() as u64;
                (Just(entries), 0..=len).prop_flat_map(|(e, h)| (Just(e), Just(h), 0..=h))
            },
        ),
        1..5,
    )
}

proptest! {
    #[test]
    fn sanitizer_emits_deduplicated_prefixes(epochs in epochs(), reject in prop::option::of(0u8..12)) {
        let exval = match reject {
            Some(k) => ExvalPolicy::RejectMarker { marker: format!("tx{k}") },
            None => ExvalPolicy::AcceptAll,
        };
        let mut s = SanitizerState::new(EpochId(1), exval.clone());
        let mut got = Vec::new();
        let mut want = Vec::new();
        let mut seen = HashSet::new();
        for (i, (entries, h, at)) in epochs.iter().enumerate() {
            let epoch = i as u64 + 1;
            prop_assert_eq!(s.current_epoch(), EpochId(epoch));
            for (p, slot) in entries.iter().enumerate() {
                let pos = p as u64 + 1;
                if pos - 1 == *at {
                    s.apply_handover(&cert(epoch, *h)).unwrap();
                }
                let entry = InnerLogEntry { epoch: EpochId(epoch), position: pos, content: content(*slot) };
                if pos > *h {
                    prop_assert!(s.is_truncated(&entry));
                }
                if let Some(o) = s.ingest(&entry).unwrap() {
                    got.push(o);
                }
                if pos <= *h {
                    if let EntryContent::Client { tx } = &entry.content {
                        if exval.accepts(tx) && seen.insert(tx.id) {
                            want.push((tx.id, EpochId(epoch), pos));
                        }
                    }
                }
            }
            if entries.len() as u64 == *at {
                s.apply_handover(&cert(epoch, *h)).unwrap();
            }
        }
        let got_ids: Vec<_> = got.iter().map(|o| (o.tx.id, o.source.epoch, o.source.position)).collect();
        prop_assert_eq!(got_ids, want);
        for (k, o) in got.iter().enumerate() {
            prop_assert_eq!(o.outer_position, k as u64 + 1);
        }
    }

    #[test]
    fn done_quorum_needs_f_plus_one_matching(
        f in 0u32..4,
        matching in 0usize..14,
        conflicting in 0usize..4,
        order_seed in any::<u64>(),
    ) {
        let old = config(1, f);
        let n = old.n();
        let matching = matching.min(n);
        let conflicting = conflicting.min(f as usize).min(n - matching);
        let good = cert(1, 10);
        let bad = cert(1, 11);
        let mut dones: Vec<Done> = Vec::new();
        for (k, m) in old.members.iter().enumerate().take(matching + conflicting) {
            let c = if k < matching { good.clone() } else { bad.clone() };
            dones.push(Done::sign(c, *m, &m.signing_key()));
        }
        // deterministic shuffle
        let len = dones.len();
        for i in (1..len).rev() {
            let j = (order_seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize;
            dones.swap(i, j);
        }
        let mut tally = DoneTally::new(old.clone());
        tally.set_expected(&good);
        let mut counted = 0;
        for d in &dones {
            tally.on_done(d);
            counted += usize::from(d.cert.digest() == good.digest());
            prop_assert_eq!(tally.reached(), counted > f as usize);
        }
        prop_assert_eq!(tally.reached(), matching > f as usize);
        prop_assert!(tally.matching().len() == matching);
    }

    #[test]
    fn event_queue_pops_in_time_order(items in prop::collection::vec((0u64..50, 0u64..4), 0..60)) {
        let mut q = EventQueue::new();
        for (i, (t, tb)) in items.iter().enumerate() {
            q.push(*t, *tb, i);
        }
        let mut last = (0, 0, 0);
        let mut popped = 0;
        while let Some((t, i)) = q.pop() {
            let key = (t, items[i].1, i);
            prop_assert!(key >= last);
            last = key;
            popped += 1;
        }
        prop_assert_eq!(popped, items.len());
    }

    #[test]
    fn certificate_digest_binds_cutoff(h1 in 0u64..1000, h2 in 0u64..1000) {
        prop_assert_eq!(cert(1, h1).digest(), cert(1, h1).digest());
        prop_assert_eq!(cert(1, h1).digest() == cert(1, h2).digest(), h1 == h2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Safety and every other verdict hold for random fault schedules within
    /// threshold, including larger epochs and frequent preemption.
    #[test]
    fn random_runs_pass_every_check(seed in any::<u64>()) {
        let p = RandomParams { min_transitions: 1, max_transitions: 4, max_f: 3, preempt_chance: 0.3 };
        let rep = verify(&run(&random_scenario_with(seed, p)));
        prop_assert!(rep.verdict(SAFETY).is_some_and(|v| !v.is_fail()));
        prop_assert!(rep.passed(), "{}", rep.to_text());
    }
}

#[test]
fn terminal_phases_have_no_successor() {
    for p in PHASES {
        assert!(!p.can_follow(Phase::ShutDown) && !p.can_follow(Phase::Aborted));
        assert!(!Phase::Idle.can_follow(p));
    }
}
