use reconf::consensus::testkit::LocalNet;
use reconf::consensus::{ConsensusPort, ConsensusReplica, ConsensusTiming, Halted};
use reconf::model::{
    ClientId, ConsensusKind, EntryContent, EpochConfig, EpochId, FaultModel, Transaction,
};

fn cfg(kind: ConsensusKind, n: u32, f: u32) -> EpochConfig {
    let model = match kind {
        ConsensusKind::Sequencer => FaultModel::Crash,
        ConsensusKind::MultiLane => FaultModel::Byzantine,
    };
    EpochConfig::with_indices(EpochId(1), 1..=n, f, model, kind)
}

fn tx(label: &str) -> EntryContent {
    EntryContent::client(Transaction::new(label.as_bytes().to_vec(), ClientId(0)))
}

fn assert_prefix_equal(net: &LocalNet) {
    let correct: Vec<_> = net.correct().collect();
    for &a in &correct {
        for &b in &correct {
            let (la, lb) = (&net.decided[a], &net.decided[b]);
            let common = la.len().min(lb.len());
            assert_eq!(la[..common], lb[..common], "replicas {a} and {b} diverge");
        }
    }
}

fn assert_in_order(net: &LocalNet) {
    for log in &net.decided {
        for (i, e) in log.iter().enumerate() {
            assert_eq!(e.position, i as u64 + 1);
        }
    }
}

#[test]
fn single_proposal_is_decided() {
    for kind in [ConsensusKind::Sequencer, ConsensusKind::MultiLane] {
        let mut net = LocalNet::new(&cfg(kind, 4, 1), ConsensusTiming::default(), 1);
        net.propose_at(0, 2, tx("T1"));
        net.run_until(5_000);
        for i in 0..4 {
            assert_eq!(net.client_log(i), vec![tx("T1")], "{kind:?} replica {i}");
        }
    }
}

#[test]
fn empty_instance_yields_nothing() {
    let mut r = ConsensusReplica::started(
        &cfg(ConsensusKind::MultiLane, 4, 1),
        0,
        ConsensusTiming::default(),
    );
    assert!(r.poll_decided().is_none());
}

#[test]
fn duplicate_proposal_is_decided_once() {
    for kind in [ConsensusKind::Sequencer, ConsensusKind::MultiLane] {
        let mut net = LocalNet::new(&cfg(kind, 4, 1), ConsensusTiming::default(), 7);
        net.propose_at(0, 0, tx("T1"));
        net.propose_at(0, 1, tx("T1"));
        net.propose_at(40, 3, tx("T1"));
        net.run_until(5_000);
        for i in 0..4 {
            assert_eq!(net.client_log(i), vec![tx("T1")], "{kind:?} replica {i}");
        }
    }
}

#[test]
fn halted_instance_rejects_proposals() {
    let c = cfg(ConsensusKind::Sequencer, 3, 1);
    let mut r = ConsensusReplica::started(&c, 0, ConsensusTiming::default());
    r.halt();
    r.halt();
    assert!(r.is_halted());
    assert_eq!(r.propose(tx("T1"), &mut Vec::new()), Err(Halted));
}

#[test]
fn sequencer_orders_by_leader_arrival() {
    let mut net = LocalNet::new(
        &cfg(ConsensusKind::Sequencer, 3, 1),
        ConsensusTiming::default(),
        3,
    );
    net.propose_at(0, 0, tx("T1"));
    net.propose_at(1, 0, tx("T2"));
    net.run_until(2_000);
    for i in 0..3 {
        let got: Vec<_> = net.decided[i]
            .iter()
            .map(|e| (e.position, e.content.clone()))
            .collect();
        assert_eq!(got, vec![(1, tx("T1")), (2, tx("T2"))]);
    }
}

#[test]
fn sequencer_leader_crash_fails_over() {
    let mut net = LocalNet::new(
        &cfg(ConsensusKind::Sequencer, 3, 1),
        ConsensusTiming::default(),
        11,
    );
    net.propose_at(0, 0, tx("T1"));
    net.crash_at(100, 0);
    net.propose_at(150, 1, tx("T2"));
    net.propose_at(160, 2, tx("T3"));
    net.run_until(10_000);
    assert_prefix_equal(&net);
    for i in [1, 2] {
        let log = net.client_log(i);
        assert_eq!(log[0], tx("T1"));
        assert_eq!(log.len(), 3, "replica {i}: {log:?}");
    }
}

#[test]
fn multilane_interleaves_lanes_round_robin() {
    let mut net = LocalNet::new(
        &cfg(ConsensusKind::MultiLane, 4, 1),
        ConsensusTiming::default(),
        5,
    );
    for lane in 0..4 {
        net.propose_at(0, lane, tx(&format!("L{lane}")));
    }
    net.run_until(2_000);
    for i in 0..4 {
        let got: Vec<_> = net.decided[i]
            .iter()
            .take(4)
            .map(|e| e.content.clone())
            .collect();
        assert_eq!(
            got,
            (0..4).map(|l| tx(&format!("L{l}"))).collect::<Vec<_>>()
        );
    }
}

#[test]
fn multilane_delayed_lane_commits_out_of_order() {
    let mut net = LocalNet::new(
        &cfg(ConsensusKind::MultiLane, 4, 1),
        ConsensusTiming::default(),
        9,
    );
    net.lane_delay.insert(1, 40);
    for lane in 0..4 {
        net.propose_at(0, lane, tx(&format!("L{lane}")));
    }
    net.run_until(2_000);
    let times = &net.commit_times[0];
    let at = |p: u64| times.iter().find(|(_, q)| *q == p).unwrap().0;
    assert!(at(3) < at(2) && at(4) < at(2), "{times:?}");
    let positions: Vec<_> = net.decided[0].iter().map(|e| e.position).collect();
    assert_eq!(&positions[..4], &[1, 2, 3, 4]);
}

#[test]
fn multilane_silent_member_becomes_noops() {
    let mut net = LocalNet::new(
        &cfg(ConsensusKind::MultiLane, 4, 1),
        ConsensusTiming::default(),
        13,
    );
    net.crash_at(0, 3);
    for k in 0..6 {
        net.propose_at(k * 30, (k % 3) as usize, tx(&format!("T{k}")));
    }
    net.run_until(5_000);
    assert_prefix_equal(&net);
    for i in 0..3 {
        assert_eq!(net.client_log(i).len(), 6);
        for e in &net.decided[i] {
            if e.position % 4 == 0 {
                assert_eq!(e.content, EntryContent::Noop);
            }
        }
    }
}

#[test]
fn halting_f_members_keeps_progress() {
    for kind in [ConsensusKind::Sequencer, ConsensusKind::MultiLane] {
        let mut net = LocalNet::new(&cfg(kind, 4, 1), ConsensusTiming::default(), 17);
        net.halt_at(0, 0);
        for k in 0..5 {
            net.propose_at(10 + k * 20, 1 + (k % 3) as usize, tx(&format!("T{k}")));
        }
        net.run_until(10_000);
        for i in 1..4 {
            assert_eq!(net.client_log(i).len(), 5, "{kind:?} replica {i}");
        }
    }
}

#[test]
fn randomized_schedules_keep_prefix_equality() {
    for seed in 0..120u64 {
        let kind = if seed % 2 == 0 {
            ConsensusKind::Sequencer
        } else {
            ConsensusKind::MultiLane
        };
        let n = 4;
        let mut net = LocalNet::new(&cfg(kind, n, 1), ConsensusTiming::default(), seed);
        if seed % 3 == 0 {
            net.crash_at(50 + seed * 7 % 200, (seed % n as u64) as usize);
        }
        let mut owed = Vec::new();
        for k in 0..12u64 {
            let at = ((seed + k * 5) % n as u64) as usize;
            let t = tx(&format!("s{seed}-{k}"));
            net.propose_at(k * 13 % 170, at, t.clone());
            owed.push((at, t));
        }
        net.run_until(20_000);
        assert_prefix_equal(&net);
        assert_in_order(&net);
        let survivors: Vec<_> = net.correct().collect();
        for &i in &survivors {
            let log = net.client_log(i);
            for (at, t) in &owed {
                if survivors.contains(at) {
                    assert!(log.contains(t), "seed {seed} replica {i} missing {t:?}");
                }
            }
        }
    }
}

#[test]
fn multilane_late_proposal_racing_noop_recovers() {
    // lane 1's proposal arrives around the no-op deadline, splitting votes
    // between the proposal and a no-op
    for delay in [45, 50, 55, 60, 65, 80] {
        for seed in 0..30u64 {
            let mut net = LocalNet::new(
                &cfg(ConsensusKind::MultiLane, 4, 1),
                ConsensusTiming::default(),
                seed,
            );
            net.lane_delay.insert(1, delay);
            for lane in 0..4 {
                net.propose_at(0, lane, tx(&format!("L{lane}")));
            }
            net.run_until(20_000);
            assert_prefix_equal(&net);
            assert_in_order(&net);
            for i in 0..4 {
                let mut got = net.client_log(i);
                got.sort_by_key(|c| format!("{c:?}"));
                let mut want: Vec<_> = (0..4).map(|l| tx(&format!("L{l}"))).collect();
                want.sort_by_key(|c| format!("{c:?}"));
                assert_eq!(got, want, "delay {delay} seed {seed} replica {i}");
            }
        }
    }
}
