use std::path::Path;
use std::sync::Arc;

use strata::access::BackendKind;
use strata::checks::{check_trace, ALL_CHECKS};
use strata::clock::{Clock, SystemClock, TimeMode, VirtualClock};
use strata::pilot::PilotConfig;
use strata::sim::QueueTimeModel;
use strata::state::names::*;
use strata::state::{Registry, Trace};
use strata::wlm::{Catalog, ResourceCatalogEntry, WlmConfig, WorkloadManager};
use strata::workflow::{run, AdaptivityHook, Edit, Pipeline, RunOptions, Stage, TaskDescription, Workflow};

fn manager(catalog: Catalog, clock: Arc<dyn Clock>, dir: &Path) -> WorkloadManager {
    let mode = clock.mode();
    let registry = Arc::new(Registry::new(clock));
    let config = PilotConfig::for_mode(mode, dir.join("sandboxes"));
    WorkloadManager::from_catalog(catalog, registry, None, config, WlmConfig::default()).unwrap()
}

fn sim_entry(id: &str, delay: f64) -> ResourceCatalogEntry {
    let mut e = ResourceCatalogEntry::new(id, 1, 16, BackendKind::Simbatch);
    e.queue_time_model = QueueTimeModel::constant(delay);
    e
}

fn two_by_two(exe: &str, args: &[&str], secs: f64) -> Workflow {
    let stage = |p: usize, s: usize| {
        let tasks = (0..2)
            .map(|i| TaskDescription::new(&format!("p{p}.s{s}.t{i}"), exe).args(args.iter().copied()).duration(secs))
            .collect();
        Stage::new(&format!("p{p}.s{s}"), tasks)
    };
    Workflow::new("wf", vec![Pipeline::new("p0", vec![stage(0, 0), stage(0, 1)])])
}

fn assert_clean(report_trace: &Path) {
    let trace = Trace::read_file(report_trace).unwrap();
    let v = check_trace(&trace, &ALL_CHECKS).unwrap();
    assert!(v.is_empty(), "{v:#?}");
}

#[test]
fn simulated_run_prefers_the_short_queue() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::new(vec![sim_entry("A", 100.0), sim_entry("B", 10.0)]).unwrap();
    let mut wlm = manager(catalog, Arc::new(VirtualClock::new()), dir.path());
    let report = run(&two_by_two("/bin/true", &[], 30.0), &mut wlm, &RunOptions::new(dir.path().into())).unwrap();
    assert!(report.succeeded);
    assert!(report.virtual_time);
    assert!(report.pilots.iter().all(|p| p.resource_id == "B"));
    assert_eq!(report.pilots[0].queue_wait_s.map(f64::round), Some(10.0));
    // Stage one: 10 s queue, 30 s of work on a 45 s pilot. Stage two no
    // longer fits the 15 s left, so a second pilot waits another 10 s.
    assert_eq!(report.pilots.len(), 2);
    assert!((report.makespan_s - 80.0).abs() < 1e-6, "{}", report.makespan_s);
    assert_clean(&report.trace_path);
    assert!(report.report_path.exists());
}

#[test]
fn failed_stage_freezes_only_its_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::new(vec![sim_entry("B", 0.0)]).unwrap();
    let mut wlm = manager(catalog, Arc::new(VirtualClock::new()), dir.path());
    let bad = Pipeline::new(
        "bad",
        vec![
            Stage::new("bad.0", vec![TaskDescription::new("missing", "no-such-program-xyz").duration(5.0)]),
            Stage::new("bad.1", vec![TaskDescription::new("after", "/bin/true").duration(5.0)]),
        ],
    );
    let good = Pipeline::new(
        "good",
        vec![
            Stage::new("good.0", vec![TaskDescription::new("g0", "/bin/true").duration(5.0)]),
            Stage::new("good.1", vec![TaskDescription::new("g1", "/bin/true").duration(5.0)]),
        ],
    );
    let wf = Workflow::new("wf", vec![bad, good]);
    let report = run(&wf, &mut wlm, &RunOptions::new(dir.path().into())).unwrap();
    assert!(!report.succeeded);
    assert_eq!(report.tasks["missing"].state, FAILED);
    assert_eq!(report.tasks["after"].state, CANCELED);
    assert_eq!(report.tasks["g1"].state, DONE);
    assert!(wlm.registry().history("after").unwrap().entered(BOUND).is_none());
    assert_clean(&report.trace_path);
}

#[test]
fn hook_appends_a_stage() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::new(vec![sim_entry("B", 0.0)]).unwrap();
    let mut wlm = manager(catalog, Arc::new(VirtualClock::new()), dir.path());
    let wf = Workflow::new(
        "wf",
        vec![Pipeline::new("p", vec![Stage::new("p.0", vec![TaskDescription::new("first", "/bin/true").duration(1.0)])])],
    );
    let mut options = RunOptions::new(dir.path().into());
    options.hooks.push(AdaptivityHook::new("p.0", |_, results| {
        assert_eq!(results.states["first"], DONE);
        vec![Edit::AppendStage {
            pipeline: "p".into(),
            stage: Stage::new("p.1", vec![TaskDescription::new("second", "/bin/true").duration(1.0)]),
        }]
    }));
    let report = run(&wf, &mut wlm, &options).unwrap();
    assert!(report.succeeded);
    assert_eq!(report.tasks["second"].stage, "p.1");
    assert_clean(&report.trace_path);
}

#[test]
fn real_local_run_with_two_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let mut local = ResourceCatalogEntry::new("local", 1, 4, BackendKind::Local);
    local.max_walltime_s = 600.0;
    let catalog = Catalog::new(vec![local]).unwrap();
    let mut wlm = manager(catalog, Arc::new(SystemClock::new()), dir.path());
    let pipeline = |p: usize| {
        let stages = (0..2)
            .map(|s| {
                let tasks = (0..4)
                    .map(|i| {
                        let uid = format!("p{p}.s{s}.t{i}");
                        if i % 2 == 0 {
                            TaskDescription::new(&uid, "echo").args(["hi"]).duration(1.0)
                        } else {
                            TaskDescription::new(&uid, "sleep").args(["0.1"]).duration(1.0)
                        }
                    })
                    .collect();
                Stage::new(&format!("p{p}.s{s}"), tasks)
            })
            .collect();
        Pipeline::new(&format!("p{p}"), stages)
    };
    let wf = Workflow::new("wf", vec![pipeline(0), pipeline(1)]);
    let report = run(&wf, &mut wlm, &RunOptions::new(dir.path().into())).unwrap();
    assert!(report.succeeded, "{:?}", report.counts);
    assert_eq!(report.tasks.len(), 16);
    assert!(report.tasks.values().all(|t| t.exit_code == Some(0)));
    assert!(report.wall_time_s < 30.0);
    assert!(!report.virtual_time);
    assert_eq!(TimeMode::Real, wlm.registry().clock().mode());
    assert_clean(&report.trace_path);
}
