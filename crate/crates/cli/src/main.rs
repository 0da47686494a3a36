use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use triplan_core::planner::{iterate_plan_with, PlanFailure, PlanOutcome};
use triplan_core::qp::QpLog;
use triplan_core::report::{self, Report};
use triplan_core::{load_scenario, svg, Config, Error};

#[derive(Parser)]
#[command(
    name = "triplan",
    version,
    about = "Iterative path/speed trajectory planner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one planning cycle on a scenario file.
    Plan(PlanArgs),
}

#[derive(clap::Args)]
struct PlanArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Flat TOML or JSON config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trajectory JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes `<prefix>-sl.svg` and `<prefix>-st.svg`.
    #[arg(long)]
    svg: Option<String>,
    #[arg(long)]
    dump_zones: Option<PathBuf>,
    #[arg(long)]
    dump_decisions: Option<PathBuf>,
    #[arg(long)]
    dump_st: Option<PathBuf>,
    /// Writes every assembled QP as `<prefix>-NNN-<label>.qp` plus `<prefix>-solves.json`.
    #[arg(long)]
    dump_qp: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Zero the wall-clock fields in the trajectory JSON.
    #[arg(long)]
    no_timing: bool,
}

enum Status {
    Ok(usize),
    Failed,
    Invalid,
}

fn status_line(status: &Status, ms: f64) {
    let (name, iters) = match status {
        Status::Ok(n) => ("ok", *n),
        Status::Failed => ("failed", 0),
        Status::Invalid => ("invalid", 0),
    };
    eprintln!("status={name} iters={iters} ms={ms:.3}");
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dump_qp(prefix: &str, log: &QpLog) -> anyhow::Result<()> {
    for (k, (label, problem)) in log.problems.iter().enumerate() {
        let name: String = label
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let mut buf = Vec::new();
        problem.write_text(&mut buf)?;
        write(
            Path::new(&format!("{prefix}-{k:03}-{name}.qp")),
            &String::from_utf8(buf)?,
        )?;
    }
    write(
        Path::new(&format!("{prefix}-solves.json")),
        &report::qp_records_json(log),
    )
}

fn emit_success(
    args: &PlanArgs,
    scenario: &triplan_core::Scenario,
    config: &Config,
    outcome: &PlanOutcome,
    ms: f64,
) -> anyhow::Result<()> {
    let mut rep = Report::from_outcome(outcome, config, ms);
    if args.no_timing {
        rep.strip_timing();
    }
    match &args.out {
        Some(p) => write(p, &rep.to_json())?,
        None => print!("{}", rep.to_json()),
    }
    if let Some(p) = &args.dump_zones {
        write(p, &report::zones_json(&outcome.decomposition))?;
    }
    if let Some(p) = &args.dump_decisions {
        write(
            p,
            &report::decisions_json(&outcome.scores, &outcome.rejected),
        )?;
    }
    if let Some(p) = &args.dump_st {
        write(
            p,
            &report::st_json(&outcome.polygons, &outcome.verdicts, &outcome.speed),
        )?;
    }
    if let Some(prefix) = &args.dump_qp {
        dump_qp(prefix, &outcome.qp)?;
    }
    if let Some(prefix) = &args.svg {
        let sl = svg::sl_svg(
            scenario,
            &outcome.decomposition,
            Some(&outcome.path),
            Some(&outcome.trajectory),
        );
        write(Path::new(&format!("{prefix}-sl.svg")), &sl)?;
        let st = svg::st_svg(
            &outcome.polygons,
            &outcome.verdicts,
            &outcome.speed,
            scenario.limits.horizon,
        );
        write(Path::new(&format!("{prefix}-st.svg")), &st)?;
    }
    Ok(())
}

// Dumps that still make sense when every decision failed.
fn emit_failure(args: &PlanArgs, failure: &PlanFailure) -> anyhow::Result<()> {
    if let (Some(p), Some(d)) = (&args.dump_zones, &failure.decomposition) {
        write(p, &report::zones_json(d))?;
    }
    if let Some(p) = &args.dump_decisions {
        write(p, &report::decisions_json(&failure.scores, &[]))?;
    }
    if let Some(prefix) = &args.dump_qp {
        dump_qp(prefix, &failure.qp)?;
    }
    Ok(())
}

fn run_plan(args: &PlanArgs) -> (Status, f64) {
    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;

    let config = match &args.config {
        Some(p) => match Config::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return (Status::Invalid, elapsed());
            }
        },
        None => Config::default(),
    };
    if args.print_config {
        print!("{}", config.to_toml());
        return (Status::Ok(0), elapsed());
    }
    let Some(path) = &args.scenario else {
        eprintln!("error: --scenario is required");
        return (Status::Invalid, elapsed());
    };
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return (Status::Invalid, elapsed());
        }
    };

    match iterate_plan_with(&scenario, &config, args.dump_qp.is_some()) {
        Ok(outcome) => {
            let ms = elapsed();
            if let Err(e) = emit_success(args, &scenario, &config, &outcome, ms) {
                eprintln!("error: {e:#}");
                return (Status::Invalid, elapsed());
            }
            (Status::Ok(outcome.iters()), ms)
        }
        Err(failure) => {
            let status = match failure.error {
                Error::PlanningFailed(_)
                | Error::InfeasibleDecisionSet
                | Error::InfeasibleCorridor
                | Error::EmptyDecisionSet
                | Error::NoFreeSpace { .. } => Status::Failed,
                _ => Status::Invalid,
            };
            eprintln!("error: {}", failure.error);
            if let Err(e) = emit_failure(args, &failure) {
                eprintln!("error: {e:#}");
            }
            (status, elapsed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Plan(args) => {
            let (status, ms) = run_plan(&args);
            status_line(&status, ms);
            ExitCode::from(match status {
                Status::Ok(_) => 0,
                Status::Failed => 2,
                Status::Invalid => 1,
            })
        }
    }
}
