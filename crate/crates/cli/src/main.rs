use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use reconf::batch::{run_and_verify, run_many, RunSummary};
use reconf::report::{self, outer_log_export};
use reconf::sim::random::random_scenario;
use reconf::sim::{load_scenario, Scenario, Trace};
use reconf::verify::{oracle_outer_log, verify, Report};

#[derive(Parser)]
#[command(
    name = "reconf",
    version,
    about = "Simulate, verify and report on epoch reconfiguration runs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Override the scenario seed (first seed for `run random`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the scenario horizon in ticks.
    #[arg(long, global = true)]
    horizon: Option<u64>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Stop at the first failing run.
    #[arg(long, global = true)]
    fail_fast: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file, a bundled experiment, `all` bundled experiments,
    /// or `random` for the randomized suite.
    Run {
        target: String,
        /// Number of random scenarios for `run random`.
        #[arg(long, default_value_t = 500)]
        count: u64,
    },
    /// Re-verify a JSONL trace.
    Verify { trace: PathBuf },
    /// Summarise every trace in a results directory.
    Report { results_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { target, count } => cmd_run(&cli, target, *count),
        Cmd::Verify { trace } => cmd_verify(&cli, trace),
        Cmd::Report { results_dir } => cmd_report(results_dir),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn apply_overrides(cli: &Cli, sc: &mut Scenario) {
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    if let Some(h) = cli.horizon {
        sc.horizon = h;
    }
}

fn resolve(target: &str) -> Result<Vec<Scenario>> {
    if target == "all" {
        return reconf::experiments::names()
            .into_iter()
            .map(|n| reconf::experiments::load(n).map_err(Into::into))
            .collect();
    }
    let path = Path::new(target);
    if path.exists() {
        return Ok(vec![
            load_scenario(path).with_context(|| format!("loading {target}"))?
        ]);
    }
    Ok(vec![reconf::experiments::load(target)?])
}

fn cmd_run(cli: &Cli, target: &str, count: u64) -> Result<bool> {
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    if target == "random" {
        return run_random(cli, count);
    }
    let mut runs = Vec::new();
    for mut sc in resolve(target)? {
        apply_overrides(cli, &mut sc);
        let (trace, rep) = run_and_verify(&sc);
        write_run(&cli.out_dir, &sc.name, &trace, &rep)?;
        print!("{}", rep.to_text());
        let ok = rep.passed();
        runs.push(RunSummary::of(&trace, &rep));
        if !ok && cli.fail_fast {
            break;
        }
    }
    report::write_report(&cli.out_dir, &runs)?;
    Ok(runs.iter().all(|r| r.passed))
}

fn run_random(cli: &Cli, count: u64) -> Result<bool> {
    let first = cli.seed.unwrap_or(0);
    let scenarios: Vec<Scenario> = (first..first + count)
        .map(|s| {
            let mut sc = random_scenario(s);
            if let Some(h) = cli.horizon {
                sc.horizon = h;
            }
            sc
        })
        .collect();
    let runs = if cli.fail_fast {
        let mut out = Vec::new();
        for sc in &scenarios {
            let (trace, rep) = run_and_verify(sc);
            out.push(RunSummary::of(&trace, &rep));
            if !rep.passed() {
                write_run(&cli.out_dir, &sc.name, &trace, &rep)?;
                break;
            }
        }
        out
    } else {
        let runs = run_many(&scenarios);
        // keep traces only for failing runs; rerunning is deterministic
        for (sc, r) in scenarios.iter().zip(&runs) {
            if !r.passed {
                let (trace, rep) = run_and_verify(sc);
                write_run(&cli.out_dir, &sc.name, &trace, &rep)?;
            }
        }
        runs
    };
    let text = report::summary_text(&runs);
    report::write_file(&cli.out_dir.join("summary.txt"), &text)?;
    let passed = runs.iter().filter(|r| r.passed).count();
    println!("random suite: {passed}/{} passed", runs.len());
    for r in runs.iter().filter(|r| !r.passed) {
        println!(
            "  {} seed={} failed: {}",
            r.name,
            r.seed,
            r.failed_checks.join(",")
        );
    }
    Ok(passed == runs.len())
}

/// Writes `<name>.trace.jsonl`, `<name>.outer.txt` and `<name>.verdict.txt`.
fn write_run(dir: &Path, name: &str, trace: &Trace, rep: &Report) -> Result<()> {
    let base = dir.join(name);
    let path = |ext: &str| PathBuf::from(format!("{}.{ext}", base.display()));
    report::write_file(&path("trace.jsonl"), &trace.to_jsonl())?;
    report::write_file(&path("verdict.txt"), &rep.to_text())?;
    // reference outer log: the oracle at the furthest correct replica
    let cursor = trace
        .cursors()
        .iter()
        .filter(|c| !c.crashed && !c.byzantine)
        .max_by_key(|c| c.outer_len);
    let lines = cursor
        .map(|c| oracle_outer_log(trace, c))
        .unwrap_or_default();
    report::write_file(&path("outer.txt"), &outer_log_export(&lines))?;
    Ok(())
}

fn cmd_verify(cli: &Cli, path: &Path) -> Result<bool> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(f))?;
    if trace.header().is_none() {
        bail!("{}: trace has no header record", path.display());
    }
    let rep = verify(&trace);
    let text = rep.to_text();
    print!("{text}");
    if cli.out_dir != Path::new("results") {
        std::fs::create_dir_all(&cli.out_dir)?;
        report::write_file(
            &cli.out_dir.join(format!("{}.verdict.txt", rep.scenario)),
            &text,
        )?;
    }
    Ok(rep.passed())
}

fn cmd_report(dir: &Path) -> Result<bool> {
    let runs = report::load_results(dir)?;
    report::write_report(dir, &runs)?;
    print!("{}", report::summary_text(&runs));
    println!();
    print!(
        "{}",
        report::breakdown_table(&report::breakdown_rows(&runs))
    );
    Ok(runs.iter().all(|r| r.passed))
}
