//! Proptest strategies shared by the integration tests.

use proptest::prelude::*;
use strata::workflow::{
    Parallelism, Pipeline, Stage, StagingAction, StagingDirective, TaskDescription, Workflow,
};

pub const TASK_STATES: [&str; 7] = ["NEW", "BOUND", "SCHEDULED", "EXECUTING", "DONE", "FAILED", "CANCELED"];

fn text() -> impl Strategy<Value = String> {
    // Quotes, escapes and non-ASCII must survive the exchange format.
    prop_oneof![
        "[a-zA-Z0-9_.-]{1,12}",
        "[ -~]{0,16}",
        "\\PC{0,8}",
    ]
}

fn staging() -> impl Strategy<Value = StagingDirective> {
    (
        "[a-z]{1,6}(/[a-z]{1,6}){0,2}",
        "[a-z]{1,6}(/[a-z]{1,6}){0,2}",
        prop_oneof![Just(StagingAction::Copy), Just(StagingAction::Link), Just(StagingAction::Move)],
    )
        .prop_map(|(source, target, action)| StagingDirective {
            source: format!("file://{source}"),
            target,
            action,
        })
}

/// A valid task description with every field exercised.
pub fn task(uid: String) -> impl Strategy<Value = TaskDescription> {
    (
        "[a-z/]{1,10}[a-z]",
        prop::collection::vec(text(), 0..4),
        prop_oneof![Just(Parallelism::Serial), Just(Parallelism::Mpi), Just(Parallelism::Openmp)],
        1u32..=16,
        0u32..=4,
        0u64..1 << 40,
        prop::collection::btree_map("[A-Z_]{1,8}", text(), 0..4),
        prop::collection::vec(staging(), 0..3),
        prop::collection::vec(staging(), 0..3),
        (1u32..100_000, 0u32..1000),
    )
        .prop_map(move |(exe, args, par, cpus, gpus, mem, env, ins, outs, (whole, frac))| {
            let mut t = TaskDescription::new(&uid, &exe).args(args);
            t.parallelism = par;
            t.cpu_count = if par == Parallelism::Serial { 1 } else { cpus };
            t.gpu_count = gpus;
            t.memory_mb = mem;
            t.environment = env;
            t.input_staging = ins;
            t.output_staging = outs;
            t.expected_duration_s = f64::from(whole) + f64::from(frac) / 1000.0;
            t
        })
}

pub fn any_task() -> impl Strategy<Value = TaskDescription> {
    "[a-zA-Z0-9_.-]{1,24}"
        .prop_filter("reserved path names", |uid| uid != "." && uid != "..")
        .prop_flat_map(task)
}

/// Workflow shape: per pipeline, per stage, the task count.
pub fn shape(pipelines: usize, stages: usize, tasks: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(1..=tasks, 1..=stages), 1..=pipelines)
}

/// Build a workflow of `exe` tasks from a shape. Task uids are `p{i}.s{j}.t{k}`.
pub fn workflow_of(shape: &[Vec<usize>], exe: &str) -> Workflow {
    let pipelines = shape
        .iter()
        .enumerate()
        .map(|(p, stages)| {
            let stages = stages
                .iter()
                .enumerate()
                .map(|(s, &n)| {
                    let tasks = (0..n).map(|t| TaskDescription::new(&format!("p{p}.s{s}.t{t}"), exe)).collect();
                    Stage::new(&format!("p{p}.s{s}"), tasks)
                })
                .collect();
            Pipeline::new(&format!("p{p}"), stages)
        })
        .collect();
    Workflow::new("wf", pipelines)
}
