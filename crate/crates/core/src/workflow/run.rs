use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::frontier::{frontier_with, frozen_pipelines};
use super::hooks::{apply_hook, AdaptivityHook};
use super::model::{validate_workflow, Workflow};
use super::WorkflowError;
use crate::clock::ns_to_secs;
use crate::state::names::*;
use crate::state::{Annotation, Registry};
use crate::wlm::WorkloadManager;

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Receives `report.json` and `trace.jsonl`.
    pub run_dir: PathBuf,
    /// Shuffle each batch of ready tasks with this seed; workflow order when absent.
    pub seed: Option<u64>,
    pub hooks: Vec<AdaptivityHook>,
}

impl RunOptions {
    pub fn new(run_dir: PathBuf) -> Self {
        Self {
            run_dir,
            seed: None,
            hooks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskOutcome {
    pub state: String,
    pub pipeline: String,
    pub stage: String,
    pub pilot: Option<String>,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotPlacement {
    pub uid: String,
    pub resource_id: String,
    pub cores: u32,
    pub gpus: u32,
    pub walltime_s: f64,
    pub state: String,
    pub submitted_s: Option<f64>,
    pub active_s: Option<f64>,
    pub queue_wait_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub workflow: String,
    /// Every task ended DONE.
    pub succeeded: bool,
    pub tasks: BTreeMap<String, TaskOutcome>,
    pub counts: BTreeMap<String, usize>,
    /// Host time spent in the run.
    pub wall_time_s: f64,
    /// Registry time from the start of the run to the last task's final state.
    pub makespan_s: f64,
    pub virtual_time: bool,
    pub pilots: Vec<PilotPlacement>,
    pub trace_path: PathBuf,
    pub report_path: PathBuf,
}

fn register_stage_members(registry: &Registry, workflow: &Workflow) -> Result<(), WorkflowError> {
    for (pos, task) in workflow.tasks() {
        if registry.contains(&task.uid) {
            continue;
        }
        registry.register_entity(&task.uid, TASK)?;
        let member = Annotation::Member {
            pipeline: workflow.pipelines[pos.pipeline].uid.clone(),
            stage: pos.stage,
        };
        registry.record_event(&task.uid, &member.to_string())?;
    }
    Ok(())
}

/// Execute `workflow` to completion.
///
/// Ready tasks are submitted as workloads whenever the frontier grows. A
/// stage whose tasks are all final fires its hooks once. A stage that ended
/// with a failure freezes its pipeline: later stages are canceled without
/// running, while other pipelines carry on. Pilots are released at the end.
pub fn run(workflow: &Workflow, wlm: &mut WorkloadManager, options: &RunOptions) -> Result<RunReport, WorkflowError> {
    let defects = validate_workflow(workflow);
    if !defects.is_empty() {
        return Err(WorkflowError::ValidationFailed(defects));
    }
    let registry = wlm.registry().clone();
    let started = Instant::now();
    let start_ns = registry.now_ns();
    let mut wf = workflow.clone();
    register_stage_members(&registry, &wf)?;

    let mut rng = options.seed.map(ChaCha8Rng::seed_from_u64);
    let mut submitted: BTreeSet<String> = BTreeSet::new();
    let mut settled: BTreeSet<String> = BTreeSet::new();

    let outcome: Result<(), WorkflowError> = loop {
        let mut changed = settle_stages(&mut wf, &registry, &options.hooks, &mut settled)?;
        let states = registry.snapshot(TASK);
        if wf.tasks().all(|(_, t)| states.get(&t.uid).is_some_and(|s| is_final(s))) {
            break Ok(());
        }

        let mut ready: Vec<String> = frontier_with(&wf, |u| states.get(u).cloned())?
            .into_iter()
            .filter(|u| !submitted.contains(u))
            .collect();
        if !ready.is_empty() {
            if let Some(rng) = rng.as_mut() {
                ready.shuffle(rng);
            }
            let tasks = ready.iter().map(|u| wf.task(u).expect("frontier task").clone()).collect();
            if let Err(e) = wlm.submit_workload(tasks) {
                break Err(e.into());
            }
            submitted.extend(ready);
            changed = true;
        }
        match wlm.progress() {
            Ok(finished) => changed |= !finished.is_empty(),
            Err(e) => break Err(e.into()),
        }
        if !changed {
            if let Err(e) = registry.clock().wait(wlm.next_deadline()) {
                break Err(e.into());
            }
        }
    };
    let shutdown = wlm.shutdown();
    outcome?;
    shutdown?;
    report(&wf, wlm, options, started, start_ns)
}

/// Fire hooks and apply fail-stop for stages that just became fully final.
fn settle_stages(
    wf: &mut Workflow,
    registry: &Registry,
    hooks: &[AdaptivityHook],
    settled: &mut BTreeSet<String>,
) -> Result<bool, WorkflowError> {
    let mut changed = false;
    loop {
        let states = registry.snapshot(TASK);
        let lookup = |u: &str| states.get(u).cloned();
        let newly_final: Vec<String> = wf
            .pipelines
            .iter()
            .flat_map(|p| &p.stages)
            .filter(|s| !settled.contains(&s.uid))
            .filter(|s| s.tasks.iter().all(|t| states.get(&t.uid).is_some_and(|st| is_final(st))))
            .map(|s| s.uid.clone())
            .collect();

        let mut edited = false;
        for stage in newly_final {
            settled.insert(stage.clone());
            for hook in hooks.iter().filter(|h| h.trigger == stage) {
                let next = apply_hook(wf, hook, &states).map_err(|e| WorkflowError::HookFailure {
                    stage: stage.clone(),
                    source: Box::new(e),
                })?;
                *wf = next;
                register_stage_members(registry, wf)?;
                edited = true;
            }
        }

        for p in frozen_pipelines(wf, lookup) {
            for stage in &wf.pipelines[p].stages {
                for task in &stage.tasks {
                    if states.get(&task.uid).map(String::as_str) == Some(NEW) {
                        registry.record_error(&task.uid, "UPSTREAM_FAILED", "an earlier stage of the pipeline failed")?;
                        registry.advance(&task.uid, CANCELED)?;
                        edited = true;
                    }
                }
            }
        }
        if !edited {
            return Ok(changed);
        }
        changed = true;
    }
}

fn report(
    wf: &Workflow,
    wlm: &WorkloadManager,
    options: &RunOptions,
    started: Instant,
    start_ns: u64,
) -> Result<RunReport, WorkflowError> {
    let registry = wlm.registry();
    let mut tasks = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut last_ns = start_ns;
    for (pos, task) in wf.tasks() {
        let history = registry.history(&task.uid)?;
        let state = history.current_state().unwrap_or(NEW).to_string();
        if let Some(r) = history.final_record() {
            last_ns = last_ns.max(r.ts_ns);
        }
        let pilot = history.events.iter().find_map(|e| match Annotation::parse(&e.name) {
            Some(Annotation::Bind { pilot }) => Some(pilot),
            _ => None,
        });
        *counts.entry(state.clone()).or_default() += 1;
        tasks.insert(
            task.uid.clone(),
            TaskOutcome {
                state,
                pipeline: wf.pipelines[pos.pipeline].uid.clone(),
                stage: wf.pipelines[pos.pipeline].stages[pos.stage].uid.clone(),
                pilot,
                exit_code: wlm.runtime().unit(&task.uid).and_then(|u| u.exit_code),
            },
        );
    }
    let secs_since_start = |ns: u64| ns_to_secs(ns.saturating_sub(start_ns));
    let pilots = wlm
        .runtime()
        .pilots()
        .map(|p| {
            let h = registry.history(&p.uid).ok();
            let submitted = h.as_ref().and_then(|h| h.entered(SUBMITTED));
            let active = h.as_ref().and_then(|h| h.entered(ACTIVE));
            PilotPlacement {
                uid: p.uid.clone(),
                resource_id: p.description.resource_id.clone(),
                cores: p.description.cores,
                gpus: p.description.gpus,
                walltime_s: p.description.walltime_s,
                state: p.state().to_string(),
                submitted_s: submitted.map(secs_since_start),
                active_s: active.map(secs_since_start),
                queue_wait_s: submitted.zip(active).map(|(s, a)| ns_to_secs(a.saturating_sub(s))),
            }
        })
        .collect();

    std::fs::create_dir_all(&options.run_dir)?;
    let trace_path = options.run_dir.join("trace.jsonl");
    let report_path = options.run_dir.join("report.json");
    registry.export_trace_file(&trace_path)?;
    let report = RunReport {
        workflow: wf.uid.clone(),
        succeeded: tasks.values().all(|t| t.state == DONE),
        tasks,
        counts,
        wall_time_s: started.elapsed().as_secs_f64(),
        makespan_s: ns_to_secs(last_ns - start_ns),
        virtual_time: registry.clock().is_virtual(),
        pilots,
        trace_path,
        report_path: report_path.clone(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(&report_path, text)?;
    Ok(report)
}
