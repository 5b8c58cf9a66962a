//! Command-line front end: catalog listing, scenario verification, the
//! Ribaucour family pipeline and report inspection.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 bad usage or scenario,
//! 3 numerical degeneracy without any failed check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use conflat::catalog;
use conflat::runner::{
    run_pipeline, run_scenario, write_outputs, OutputPaths, Report, Run, RunError, Scenario, Status,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "conflat", version, about = "Verify conformally flat submanifolds and build Ribaucour families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List catalog items and their declared properties.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Run the suites selected by a scenario file.
    Verify(RunArgs),
    /// Run the Ribaucour family pipeline of a scenario file.
    Pipeline(RunArgs),
    /// Summarize a report file or a directory containing report.json.
    Report {
        path: PathBuf,
        /// Print failing checks only.
        #[arg(long)]
        failing: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Points per axis of the Ribaucour grid (at least 5).
    #[arg(long)]
    grid: Option<usize>,
    /// Multiplier for every upper-bound tolerance.
    #[arg(long)]
    tol_scale: Option<f64>,
    /// Directory for report.json, report.csv and family/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print every check, not only failures.
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<RunError>().is_some_and(|r| matches!(r, RunError::Config(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::List { json } => list(json),
        Command::Verify(a) => execute(&a, false),
        Command::Pipeline(a) => execute(&a, true),
        Command::Report { path, failing } => show(&path, failing),
    }
}

#[derive(Serialize)]
struct Listing {
    name: String,
    n: usize,
    ambient: String,
    conformal_factor: bool,
    expected: catalog::Expected,
}

fn list(json: bool) -> Result<u8> {
    let items = catalog::all().context("building catalog")?;
    let rows: Vec<Listing> = items
        .iter()
        .map(|it| Listing {
            name: it.name.clone(),
            n: it.dim(),
            ambient: format!("{:?}", it.ambient),
            conformal_factor: it.conformal.is_some(),
            expected: it.expected.clone(),
        })
        .collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        for r in rows {
            let e = &r.expected;
            println!(
                "{:<22} n={} {:<32} conformally_flat={} k={} omega={}{}",
                r.name,
                r.n,
                r.ambient,
                e.conformally_flat,
                e.k.map_or("-".into(), |k| k.to_string()),
                r.conformal_factor,
                e.negative_control.as_ref().map_or(String::new(), |s| format!(" negative_control={s}")),
            );
        }
    }
    Ok(0)
}

fn load(a: &RunArgs) -> Result<Scenario> {
    let mut sc = Scenario::load(&a.scenario)?;
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    if let Some(g) = a.grid {
        sc.grid = Some(g);
    }
    if let Some(t) = a.tol_scale {
        sc.tol_scale = t;
    }
    if let Some(dir) = &a.out {
        sc.output = OutputPaths::in_dir(dir);
    }
    sc.validate().map_err(RunError::from)?;
    Ok(sc)
}

fn execute(a: &RunArgs, pipeline: bool) -> Result<u8> {
    let sc = load(a)?;
    let run: Run = if pipeline { run_pipeline(&sc)? } else { run_scenario(&sc)? };
    let written = write_outputs(&run, &sc.output)?;
    print_report(&run.report, !a.verbose);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(run.report.exit_code() as u8)
}

fn print_report(r: &Report, failing_only: bool) {
    let d = &r.deterministic;
    for c in r.checks() {
        if failing_only && c.pass {
            continue;
        }
        let status = match c.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::NotApplicable => "n/a ",
            Status::Error => "ERR ",
        };
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!(
            "{status} {:<48} residual {:>10} tol {:>10}  {}{}",
            c.name,
            num(c.residual),
            num(c.tolerance),
            c.anchor,
            c.note.as_ref().map_or(String::new(), |n| format!(" ({n})")),
        );
    }
    let s = &d.summary;
    println!(
        "{}: {} checks, {} passed, {} failed, {} errors, {} not applicable; exit {}; hash {}",
        d.item.name, s.total, s.passed, s.failed, s.errors, s.not_applicable, d.exit_code, r.hash
    );
}

fn show(path: &Path, failing: bool) -> Result<u8> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let r = Report::load(&file)?;
    print_report(&r, failing);
    if !r.verify_hash() {
        eprintln!("warning: hash does not match the deterministic section");
        return Ok(1);
    }
    Ok(r.exit_code() as u8)
}
