//! Text exports: outer logs, phase tables and result-directory summaries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::batch::RunSummary;
use crate::error::ReportError;
use crate::metrics::PhaseBreakdown;
use crate::sim::{Record, ReplicaRef, Trace};
use crate::verify::{verify, OuterLine};

/// One line per entry: `outer_position txid_hex source_epoch source_position`.
pub fn outer_log_export(lines: &[OuterLine]) -> String {
    let mut s = String::new();
    for l in lines {
        let _ = writeln!(s, "{} {} {} {}", l.outer, l.tx, l.src_epoch.0, l.src_pos);
    }
    s
}

/// The outer log `replica` emitted during the run, rebuilt from its Emit records.
pub fn replica_outer_log(trace: &Trace, replica: ReplicaRef) -> Vec<OuterLine> {
    trace
        .records
        .iter()
        .filter_map(|r| match r {
            Record::Emit {
                r,
                outer,
                tx,
                src_epoch,
                src_pos,
                ..
            } if *r == replica => Some(OuterLine {
                outer: *outer,
                tx: *tx,
                src_epoch: *src_epoch,
                src_pos: *src_pos,
            }),
            _ => None,
        })
        .collect()
}

pub fn breakdown_table(rows: &[(String, PhaseBreakdown)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>5} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}  dominant",
        "scenario", "from", "to", "n_old", "n_new", "t1", "t2", "t3", "total"
    );
    for (name, b) in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>5} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7}  {}",
            name,
            b.from.0,
            b.to.0,
            b.n_old,
            b.n_new,
            b.t1(),
            b.t2(),
            b.t3(),
            b.total(),
            b.dominant()
        );
    }
    s
}

pub fn breakdown_csv(rows: &[(String, PhaseBreakdown)]) -> String {
    let mut s = String::from(
        "scenario,from,to,n_old,n_new,t_ec,t_ready,t_handover,t_active,t1,t2,t3,total\n",
    );
    for (name, b) in rows {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{},{},{},{}",
            b.from.0,
            b.to.0,
            b.n_old,
            b.n_new,
            b.t_ec,
            b.t_ready,
            b.t_handover,
            b.t_active,
            b.t1(),
            b.t2(),
            b.t3(),
            b.total()
        );
    }
    s
}

/// Total transition time against incoming membership size.
pub fn scaling_csv(rows: &[(String, PhaseBreakdown)]) -> String {
    let mut s = String::from("n_new,transitions,mean_total,min_total,max_total\n");
    let mut sizes: Vec<usize> = rows.iter().map(|(_, b)| b.n_new).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for n in sizes {
        let totals: Vec<u64> = rows
            .iter()
            .filter(|(_, b)| b.n_new == n)
            .map(|(_, b)| b.total())
            .collect();
        let mean = totals.iter().sum::<u64>() as f64 / totals.len() as f64;
        let _ = writeln!(
            s,
            "{n},{},{mean:.1},{},{}",
            totals.len(),
            totals.iter().min().expect("non-empty"),
            totals.iter().max().expect("non-empty")
        );
    }
    s
}

pub fn summary_text(runs: &[RunSummary]) -> String {
    let mut s = String::new();
    let passed = runs.iter().filter(|r| r.passed).count();
    let _ = writeln!(s, "runs: {}", runs.len());
    let _ = writeln!(s, "passed: {passed}");
    let _ = writeln!(s, "failed: {}", runs.len() - passed);
    for r in runs {
        let verdict = if r.passed {
            "PASS".to_string()
        } else {
            format!("FAIL [{}]", r.failed_checks.join(","))
        };
        let _ = writeln!(
            s,
            "run {} seed={} end={} {verdict}",
            r.name, r.seed, r.end_time
        );
    }
    s
}

pub fn breakdown_rows(runs: &[RunSummary]) -> Vec<(String, PhaseBreakdown)> {
    runs.iter()
        .flat_map(|r| r.breakdown.iter().map(|b| (r.name.clone(), *b)))
        .collect()
}

/// Every `*.trace.jsonl` under `dir`, sorted by path.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let rd = std::fs::read_dir(dir).map_err(|e| ReportError::Read {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".trace.jsonl"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Re-verifies every trace in a results directory.
pub fn load_results(dir: &Path) -> Result<Vec<RunSummary>, ReportError> {
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(ReportError::Empty);
    }
    files
        .iter()
        .map(|p| {
            let read_err = |message: String| ReportError::Read {
                path: p.display().to_string(),
                message,
            };
            let f = std::fs::File::open(p).map_err(|e| read_err(e.to_string()))?;
            let trace = Trace::read_jsonl(std::io::BufReader::new(f))
                .map_err(|e| read_err(e.to_string()))?;
            Ok(RunSummary::of(&trace, &verify(&trace)))
        })
        .collect()
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    std::fs::write(path, contents).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `summary.txt`, `phases.csv` and `scaling.csv` into `dir`.
pub fn write_report(dir: &Path, runs: &[RunSummary]) -> Result<(), ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Empty);
    }
    let rows = breakdown_rows(runs);
    write_file(
        &dir.join("summary.txt"),
        &(summary_text(runs) + "\n" + &breakdown_table(&rows)),
    )?;
    write_file(&dir.join("phases.csv"), &breakdown_csv(&rows))?;
    write_file(&dir.join("scaling.csv"), &scaling_csv(&rows))
}
