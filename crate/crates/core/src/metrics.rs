//! Per-transition phase timings recovered from a trace.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::EpochId;
use crate::sim::{Record, Trace};

/// Timings of one completed transition, in simulated ticks.
///
/// `t1` runs from the first release of the EpochChange to the first Ready
/// submission, `t2` from there to the first replica holding the handover
/// certificate, `t3` from there to the first activation of the new epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseBreakdown {
    pub from: EpochId,
    pub to: EpochId,
    pub n_old: usize,
    pub n_new: usize,
    pub t_ec: u64,
    pub t_ready: u64,
    pub t_handover: u64,
    pub t_active: u64,
}

impl PhaseBreakdown {
    pub fn t1(&self) -> u64 {
        self.t_ready - self.t_ec
    }

    pub fn t2(&self) -> u64 {
        self.t_handover - self.t_ready
    }

    pub fn t3(&self) -> u64 {
        self.t_active - self.t_handover
    }

    pub fn total(&self) -> u64 {
        self.t_active - self.t_ec
    }

    /// Name of the longest phase.
    pub fn dominant(&self) -> &'static str {
        let (t1, t2, t3) = (self.t1(), self.t2(), self.t3());
        if t2 >= t1 && t2 >= t3 {
            "t2"
        } else if t1 >= t3 {
            "t1"
        } else {
            "t3"
        }
    }
}

pub fn phase_breakdown(trace: &Trace) -> Vec<PhaseBreakdown> {
    let Some(sc) = trace.header() else {
        return Vec::new();
    };
    let sizes: BTreeMap<EpochId, usize> = sc.configs().iter().map(|c| (c.epoch, c.n())).collect();
    let mut ec_pos: BTreeMap<EpochId, (EpochId, u64)> = BTreeMap::new();
    let mut release: BTreeMap<(EpochId, u64), u64> = BTreeMap::new();
    let mut ready: BTreeMap<EpochId, u64> = BTreeMap::new();
    let mut handover: BTreeMap<EpochId, u64> = BTreeMap::new();
    let mut active: BTreeMap<EpochId, (EpochId, u64)> = BTreeMap::new();
    for rec in &trace.records {
        match rec {
            Record::EpochChangeSeen {
                epoch, pos, next, ..
            } => {
                ec_pos.entry(*next).or_insert((*epoch, *pos));
            }
            Record::InnerRelease { t, epoch, pos, .. } => {
                release.entry((*epoch, *pos)).or_insert(*t);
            }
            Record::ReadySubmitted { t, to, .. } => {
                ready.entry(*to).or_insert(*t);
            }
            Record::Certificate { t, cert, .. } => {
                handover.entry(cert.next_config.epoch).or_insert(*t);
            }
            Record::Activated { t, epoch, link, .. } => {
                active.entry(*epoch).or_insert((link.cert.old_epoch, *t));
            }
            _ => {}
        }
    }
    active
        .iter()
        .filter_map(|(to, (from, t_active))| {
            let at = ec_pos.get(to)?;
            Some(PhaseBreakdown {
                from: *from,
                to: *to,
                n_old: sizes.get(from).copied().unwrap_or(0),
                n_new: sizes.get(to).copied().unwrap_or(0),
                t_ec: *release.get(at)?,
                t_ready: *ready.get(to)?,
                t_handover: *handover.get(to)?,
                t_active: *t_active,
            })
        })
        .collect()
}
