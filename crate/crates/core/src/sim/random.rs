//! Random scenario generation for the randomized safety suite.
//!
//! Faults stay within each epoch's threshold: at most `f` faulty members per
//! epoch. Byzantine-only behaviours are only given to Byzantine epochs, and
//! silence only to genesis members, since an incoming member that never sends
//! a Ready blocks its handover by design.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    DelayModel, EpochSpec, ReplicaRef, ResubmitPolicy, Scenario, ScheduledEvent, Timing,
    SCENARIO_VERSION,
};
use crate::model::{ConsensusKind, ExvalPolicy, FaultModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomParams {
    pub min_transitions: usize,
    pub max_transitions: usize,
    pub max_f: u32,
    /// Probability that a transition is immediately preempted by a second one.
    pub preempt_chance: f64,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams {
            min_transitions: 1,
            max_transitions: 4,
            max_f: 2,
            preempt_chance: 0.15,
        }
    }
}

pub fn random_scenario(seed: u64) -> Scenario {
    random_scenario_with(seed, RandomParams::default())
}

pub fn random_scenario_with(seed: u64, p: RandomParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ca1_ab1e);
    let min_latency = rng.gen_range(2..=6);
    let max_latency = min_latency + rng.gen_range(0..=14);
    let network = DelayModel {
        min_latency,
        max_latency,
    };
    let mut timing = Timing::default();
    timing.consensus.noop_timeout = timing.consensus.noop_timeout.max(2 * max_latency + 10);

    let transitions = rng.gen_range(p.min_transitions..=p.max_transitions);
    let mut epochs = Vec::new();
    let mut schedule = Vec::new();
    let mut next_epoch = 1u64;
    let mut next_index = 1u32;
    let mut new_epoch = |rng: &mut ChaCha8Rng| {
        let fault_model = if rng.gen_bool(0.5) {
            FaultModel::Byzantine
        } else {
            FaultModel::Crash
        };
        let consensus = if rng.gen_bool(0.5) {
            ConsensusKind::MultiLane
        } else {
            ConsensusKind::Sequencer
        };
        let f = rng.gen_range(0..=p.max_f);
        let base = match fault_model {
            FaultModel::Byzantine => 3 * f + 1,
            FaultModel::Crash => 2 * f + 1,
        };
        let n = (base + rng.gen_range(0..=2)).max(1);
        let start = if rng.gen_bool(0.5) { 1 } else { next_index };
        let indices: Vec<u32> = (start..start + n).collect();
        next_index = next_index.max(start + n);
        let spec = EpochSpec {
            epoch: next_epoch,
            n: None,
            indices: Some(indices),
            f,
            fault_model,
            consensus,
        };
        next_epoch += 1;
        spec
    };

    epochs.push(new_epoch(&mut rng));
    let mut t = rng.gen_range(60..200);
    let mut from = 1u64;
    for _ in 0..transitions {
        let to = epochs.len() as u64 + 1;
        epochs.push(new_epoch(&mut rng));
        schedule.push(ScheduledEvent::EpochChange { at: t, from, to });
        let mut landed = to;
        if rng.gen_bool(p.preempt_chance) {
            let later = epochs.len() as u64 + 1;
            epochs.push(new_epoch(&mut rng));
            schedule.push(ScheduledEvent::EpochChange {
                at: t + rng.gen_range(0..=3),
                from,
                to: later,
            });
            landed = later;
        }
        from = landed;
        t += rng.gen_range(150..450);
    }
    let last_ec = t;

    let interval = rng.gen_range(12..40);
    schedule.push(ScheduledEvent::Workload {
        at: 0,
        until: last_ec,
        interval,
        prefix: "w".into(),
    });
    for k in 0..rng.gen_range(0..3) {
        let txs = (0..rng.gen_range(1..4))
            .map(|j| format!("c{k}-{j}"))
            .collect();
        let resubmit = if rng.gen_bool(0.3) {
            ResubmitPolicy::Never
        } else {
            ResubmitPolicy::Timeout
        };
        schedule.push(ScheduledEvent::Client {
            at: rng.gen_range(0..last_ec),
            txs,
            spacing: rng.gen_range(0..20),
            to: None,
            resubmit,
            resubmit_timeout: None,
        });
    }

    let genesis = epochs[0].epoch;
    for spec in &epochs {
        let mut members = spec.indices();
        members.shuffle(&mut rng);
        let faulty = rng.gen_range(0..=spec.f) as usize;
        let byz = spec.fault_model == FaultModel::Byzantine;
        for &index in members.iter().take(faulty) {
            let replica = ReplicaRef(spec.epoch, index);
            let roll = rng.gen_range(0..10);
            let ev = match roll {
                0..=2 if byz => ScheduledEvent::EquivocateDone { replica },
                3 if byz => ScheduledEvent::TamperSync { replica },
                4 if byz && spec.epoch == genesis => ScheduledEvent::Silent { replica },
                _ if spec.epoch != genesis && rng.gen_bool(0.5) => ScheduledEvent::Crash {
                    at: 0,
                    replica,
                    after_ready: true,
                },
                _ => ScheduledEvent::Crash {
                    at: rng.gen_range(0..last_ec + 400),
                    replica,
                    after_ready: false,
                },
            };
            schedule.push(ev);
        }
    }

    for _ in 0..rng.gen_range(0..3) {
        let spec = epochs.choose(&mut rng).expect("non-empty");
        let members = spec.indices();
        let at = rng.gen_range(0..last_ec);
        let extra = rng.gen_range(10..120);
        let until = Some(at + rng.gen_range(50..400));
        if spec.consensus == ConsensusKind::MultiLane && rng.gen_bool(0.5) {
            let lane = *members.choose(&mut rng).expect("non-empty");
            schedule.push(ScheduledEvent::DelayLane {
                at,
                epoch: spec.epoch,
                lane,
                extra,
                until,
            });
        } else {
            let a = ReplicaRef(spec.epoch, *members.choose(&mut rng).expect("non-empty"));
            let other = epochs.choose(&mut rng).expect("non-empty");
            let b = ReplicaRef(
                other.epoch,
                *other.indices().choose(&mut rng).expect("non-empty"),
            );
            if a != b {
                schedule.push(ScheduledEvent::DelayLink {
                    at,
                    from: a,
                    to: b,
                    extra,
                    until,
                });
            }
        }
    }

    let exval = if rng.gen_bool(0.2) {
        ExvalPolicy::RejectMarker {
            marker: "w-1".into(),
        }
    } else {
        ExvalPolicy::AcceptAll
    };
    let sc = Scenario {
        scenario_version: SCENARIO_VERSION,
        name: format!("random-{seed}"),
        seed,
        horizon: last_ec + 6000,
        network,
        timing,
        exval,
        trace_messages: false,
        epochs,
        schedule,
    };
    debug_assert!(sc.validate().is_ok(), "{:?}", sc.validate());
    sc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate_and_respect_thresholds() {
        for seed in 0..200 {
            let sc = random_scenario(seed);
            sc.validate().unwrap();
            assert!(!sc.over_threshold(), "seed {seed}");
            let n = sc
                .schedule
                .iter()
                .filter(|e| matches!(e, ScheduledEvent::EpochChange { .. }))
                .count();
            assert!((1..=8).contains(&n));
        }
    }

    #[test]
    fn same_seed_same_scenario() {
        assert_eq!(random_scenario(9), random_scenario(9));
    }
}
