//! Workflow description and execution: pipelines of stages of tasks.
//!
//! Stages of one pipeline run strictly in sequence (a stage starts only once
//! every task of the previous stage is final), tasks within a stage may run
//! concurrently, and pipelines are independent of each other.

mod dag;
mod frontier;
mod hooks;
mod model;
mod run;
mod task;

pub use dag::{import_dag, import_dag_as, longest_path_depths};
pub use frontier::{frontier_with, frozen_pipelines, ready_frontier};
pub use hooks::{apply_edits, apply_hook, AdaptivityHook, Edit, StageResults};
pub use model::{validate_workflow, Defect, Pipeline, Stage, TaskPos, Workflow};
pub use run::{run, PilotPlacement, RunOptions, RunReport, TaskOutcome};
pub use task::{
    check_relative, Parallelism, StagingAction, StagingDirective, TaskDescription, DEFAULT_EXPECTED_DURATION_S,
};

use thiserror::Error;

use crate::clock::Stalled;
use crate::state::StateError;
use crate::wlm::WlmError;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("task `{0}` is not registered")]
    UnregisteredTask(String),
    #[error("workflow is invalid: {0:?}")]
    ValidationFailed(Vec<Defect>),
    #[error("dependency cycle through {0:?}")]
    CycleDetected(Vec<String>),
    #[error("edge references unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` appears twice")]
    DuplicateNode(String),
    #[error("a DAG needs at least one node")]
    EmptyDag,
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("stage `{0}` has tasks that are not final")]
    TriggerNotFinal(String),
    #[error("illegal edit: {0}")]
    IllegalEdit(String),
    #[error("hook on stage `{stage}` failed: {source}")]
    HookFailure {
        stage: String,
        #[source]
        source: Box<WorkflowError>,
    },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Workload(#[from] WlmError),
    #[error(transparent)]
    Stalled(#[from] Stalled),
    #[error("writing run output: {0}")]
    Io(#[from] std::io::Error),
}
