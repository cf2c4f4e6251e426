//! The `strata` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 workload
//! failure, 3 trace violations. Every execution flag can also be set through
//! a `STRATA_` environment variable.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand};

use crate::bridge::{canonical_json, serve};
use crate::checks::{check_trace, ALL_CHECKS};
use crate::clock::{Clock, SystemClock, VirtualClock};
use crate::pilot::{PilotConfig, PilotDescription};
use crate::sim::Scenario;
use crate::state::{Registry, Trace};
use crate::access::BackendKind;
use crate::wlm::{Catalog, WlmConfig, WorkloadManager, DEFAULT_CONCURRENCY_CAP};
use crate::workflow::{run, RunOptions, RunReport, Workflow, WorkflowError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_WORKLOAD_FAILED: i32 = 2;
pub const EXIT_TRACE_VIOLATIONS: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "strata", version, about = "Run pipeline workflows on pilots over local or simulated batch resources")]
pub struct Cli {
    /// More log output on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a workflow for real.
    Run(RunArgs),
    /// Execute a workflow against simulated time and batch queues.
    Simulate(SimulateArgs),
    /// Start pilots and serve them over HTTP until interrupted.
    Serve(ServeArgs),
    /// Validate a trace file.
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExecFlags {
    /// Resource catalog (TOML).
    #[arg(long, env = "STRATA_CATALOG")]
    pub catalog: PathBuf,
    /// Let smaller queued units start ahead of a blocked larger one.
    #[arg(long, env = "STRATA_BACKFILL")]
    pub backfill: bool,
    /// Most tasks a pilot is sized to run at once.
    #[arg(long, env = "STRATA_CONCURRENCY_CAP", default_value_t = DEFAULT_CONCURRENCY_CAP)]
    pub concurrency_cap: u32,
    /// Sandboxes, trace and report go here.
    #[arg(long, env = "STRATA_RUN_DIR", default_value = "strata-run")]
    pub run_dir: PathBuf,
    /// Shuffle ready tasks with this seed instead of keeping workflow order.
    #[arg(long, env = "STRATA_SEED")]
    pub seed: Option<u64>,
    /// Print the report as JSON.
    #[arg(long, env = "STRATA_JSON")]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Workflow file (TOML or JSON).
    pub workflow: PathBuf,
    #[command(flatten)]
    pub flags: ExecFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub workflow: PathBuf,
    /// Background load for the simulated clusters.
    #[arg(long, env = "STRATA_SCENARIO")]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ExecFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "STRATA_CATALOG")]
    pub catalog: PathBuf,
    /// Pilot to start, as RESOURCE:CORES[:WALLTIME_S[:GPUS]]. Repeatable.
    #[arg(long = "pilot")]
    pub pilots: Vec<String>,
    #[arg(long, env = "STRATA_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = "STRATA_RUN_DIR", default_value = "strata-run")]
    pub run_dir: PathBuf,
    #[arg(long, env = "STRATA_BACKFILL")]
    pub backfill: bool,
    #[arg(long, env = "STRATA_CONCURRENCY_CAP", default_value_t = DEFAULT_CONCURRENCY_CAP)]
    pub concurrency_cap: u32,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    pub trace: PathBuf,
    /// Cross-entity check to run: stage-barrier, no-oversubscription,
    /// late-binding or walltime. Repeatable or comma-separated; all of them
    /// when omitted.
    #[arg(long = "check", value_delimiter = ',')]
    pub checks: Vec<String>,
    #[arg(long, env = "STRATA_JSON")]
    pub json: bool,
}

/// Parse `args` (program name first) and run the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match cli.command {
        Command::Run(a) => cmd_run(&a.workflow, &a.flags, None),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::Trace(a) => cmd_trace(&a),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn usage(message: impl std::fmt::Display) -> i32 {
    eprintln!("strata: {message}");
    EXIT_USAGE
}

fn manager(
    catalog: Catalog,
    clock: Arc<dyn Clock>,
    scenario: Option<&Scenario>,
    run_dir: &Path,
    backfill: bool,
    concurrency_cap: u32,
) -> Result<WorkloadManager, String> {
    if concurrency_cap == 0 {
        return Err("--concurrency-cap must be positive".into());
    }
    let mode = clock.mode();
    let registry = Arc::new(Registry::new(clock));
    let mut pilot_config = PilotConfig::for_mode(mode, run_dir.to_path_buf());
    pilot_config.backfill = backfill;
    let config = WlmConfig {
        concurrency_cap,
        ..WlmConfig::default()
    };
    WorkloadManager::from_catalog(catalog, registry, scenario, pilot_config, config).map_err(|e| e.to_string())
}

fn cmd_run(workflow: &Path, flags: &ExecFlags, scenario: Option<&Scenario>) -> i32 {
    let wf = match Workflow::load(workflow) {
        Ok(wf) => wf,
        Err(e) => return usage(e),
    };
    let catalog = match Catalog::load(&flags.catalog) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let clock: Arc<dyn Clock> = if scenario.is_some() {
        Arc::new(VirtualClock::new())
    } else {
        Arc::new(SystemClock::new())
    };
    let mut wlm = match manager(catalog, clock, scenario, &flags.run_dir, flags.backfill, flags.concurrency_cap) {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    let mut options = RunOptions::new(flags.run_dir.clone());
    options.seed = flags.seed;
    match run(&wf, &mut wlm, &options) {
        Ok(report) => {
            print_report(&report, flags.json);
            if report.succeeded {
                EXIT_OK
            } else {
                EXIT_WORKLOAD_FAILED
            }
        }
        Err(e @ WorkflowError::ValidationFailed(_)) => usage(e),
        Err(e) => {
            eprintln!("strata: {e}");
            EXIT_WORKLOAD_FAILED
        }
    }
}

fn print_report(report: &RunReport, json: bool) {
    let mut out = std::io::stdout().lock();
    if json {
        let _ = out.write_all(canonical_json(report).as_bytes());
        return;
    }
    let counts: Vec<String> = report.counts.iter().map(|(s, n)| format!("{s}={n}")).collect();
    let _ = writeln!(out, "workflow {}: {}", report.workflow, counts.join(" "));
    for p in &report.pilots {
        let wait = p.queue_wait_s.map_or("-".to_string(), |w| format!("{w:.1} s"));
        let _ = writeln!(
            out,
            "{} on {}: {} cores, {} gpus, walltime {} s, queue wait {wait}, {}",
            p.uid, p.resource_id, p.cores, p.gpus, p.walltime_s, p.state
        );
    }
    let clock = if report.virtual_time { "virtual" } else { "wall" };
    let _ = writeln!(out, "makespan {:.3} s ({clock} time)", report.makespan_s);
    for (uid, t) in report.tasks.iter().filter(|(_, t)| t.state != crate::state::names::DONE) {
        let _ = writeln!(out, "  {uid}: {}", t.state);
    }
    let _ = writeln!(out, "report {}", report.report_path.display());
    let _ = writeln!(out, "trace {}", report.trace_path.display());
}

fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let scenario = match &args.scenario {
        Some(path) => match Scenario::load(path) {
            Ok(s) => s,
            Err(e) => return usage(e),
        },
        None => Scenario::default(),
    };
    match Catalog::load(&args.flags.catalog) {
        Ok(c) if !c.resources.iter().any(|r| r.backend == BackendKind::Simbatch) => {
            return usage("the catalog has no simbatch resource to simulate");
        }
        Ok(_) => {}
        Err(e) => return usage(e),
    }
    cmd_run(&args.workflow, &args.flags, Some(&scenario))
}

/// `RESOURCE:CORES[:WALLTIME_S[:GPUS]]`, walltime defaulting to the
/// resource maximum.
pub fn parse_pilot_spec(spec: &str, catalog: &Catalog) -> Result<PilotDescription, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(2..=4).contains(&parts.len()) {
        return Err(format!("pilot `{spec}`: expected RESOURCE:CORES[:WALLTIME_S[:GPUS]]"));
    }
    let entry = catalog
        .get(parts[0])
        .ok_or_else(|| format!("pilot `{spec}`: unknown resource `{}`", parts[0]))?;
    let cores: u32 = parts[1].parse().map_err(|e| format!("pilot `{spec}`: cores: {e}"))?;
    let walltime_s: f64 = match parts.get(2) {
        Some(w) => w.parse().map_err(|e| format!("pilot `{spec}`: walltime: {e}"))?,
        None => entry.max_walltime_s,
    };
    let gpus: u32 = match parts.get(3) {
        Some(g) => g.parse().map_err(|e| format!("pilot `{spec}`: gpus: {e}"))?,
        None => 0,
    };
    if cores == 0 || cores > entry.total_cores() || gpus > entry.total_gpus() {
        return Err(format!("pilot `{spec}`: does not fit resource `{}`", entry.resource_id));
    }
    if !(walltime_s.is_finite() && walltime_s > 0.0) {
        return Err(format!("pilot `{spec}`: walltime must be positive"));
    }
    Ok(PilotDescription {
        resource_id: entry.resource_id.clone(),
        cores,
        gpus,
        walltime_s: walltime_s.min(entry.max_walltime_s),
        queue: entry.queue.clone(),
    })
}

fn cmd_serve(args: &ServeArgs) -> i32 {
    let catalog = match Catalog::load(&args.catalog) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let pilots: Result<Vec<_>, _> = args.pilots.iter().map(|s| parse_pilot_spec(s, &catalog)).collect();
    let pilots = match pilots {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let mut wlm = match manager(
        catalog,
        Arc::new(SystemClock::new()),
        None,
        &args.run_dir,
        args.backfill,
        args.concurrency_cap,
    ) {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    for pilot in pilots {
        if let Err(e) = wlm.submit_to_pool(pilot) {
            return usage(e);
        }
    }
    let wlm = Arc::new(Mutex::new(wlm));
    let handle = match serve(wlm.clone(), &args.bind) {
        Ok(h) => h,
        Err(e) => {
            let _ = wlm.lock().map(|mut w| w.shutdown());
            return usage(e);
        }
    };
    println!("listening on {}", handle.local_addr());
    let _ = std::io::stdout().flush();

    let interrupted = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map(|rt| rt.block_on(tokio::signal::ctrl_c()));
    if let Ok(Err(e)) | Err(e) = interrupted {
        eprintln!("strata: waiting for interrupt: {e}");
    }
    handle.shutdown();

    let mut wlm = wlm.lock().unwrap_or_else(|p| p.into_inner());
    if let Err(e) = wlm.shutdown() {
        eprintln!("strata: shutting down pilots: {e}");
    }
    let trace = args.run_dir.join("trace.jsonl");
    let written = std::fs::create_dir_all(&args.run_dir).and_then(|()| wlm.registry().export_trace_file(&trace));
    match written {
        Ok(_) => {
            println!("trace {}", trace.display());
            EXIT_OK
        }
        Err(e) => usage(format!("{}: {e}", trace.display())),
    }
}

fn cmd_trace(args: &TraceArgs) -> i32 {
    let trace = match Trace::read_file(&args.trace) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", args.trace.display())),
    };
    let checks: Vec<String> = if args.checks.is_empty() {
        ALL_CHECKS.iter().map(|c| c.to_string()).collect()
    } else {
        args.checks.clone()
    };
    let violations = match check_trace(&trace, &checks) {
        Ok(v) => v,
        Err(e) => return usage(e),
    };
    let mut out = std::io::stdout().lock();
    if args.json {
        let body = serde_json::json!({
            "trace": args.trace,
            "entities": trace.histories.len(),
            "checks": checks,
            "violations": violations,
        });
        let _ = out.write_all(canonical_json(&body).as_bytes());
    } else {
        for v in &violations {
            let _ = writeln!(out, "{} {}: {}", v.check, v.uid, v.detail);
        }
        let _ = writeln!(
            out,
            "{} entities, checks {}: {} violations",
            trace.histories.len(),
            checks.join(","),
            violations.len()
        );
    }
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_TRACE_VIOLATIONS
    }
}
