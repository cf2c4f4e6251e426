use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::model::{validate_workflow, Pipeline, Stage, Workflow};
use super::task::TaskDescription;
use super::WorkflowError;
use crate::state::names::{is_final, NEW};

/// A change a hook may request once its trigger stage has finished.
#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    /// Append a stage to the pipeline that owns the trigger stage.
    AppendStage { pipeline: String, stage: Stage },
    AppendPipeline(Pipeline),
    /// Replace the description of a task that has not been bound yet.
    ModifyTask(TaskDescription),
}

/// What the hook sees about the stage that just finished.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResults {
    pub pipeline: String,
    pub stage: String,
    pub states: BTreeMap<String, String>,
}

type HookFn = dyn Fn(&Workflow, &StageResults) -> Vec<Edit> + Send + Sync;

/// Runtime adaptivity: a pure function from a workflow snapshot and the
/// results of one completed stage to a list of edits.
#[derive(Clone)]
pub struct AdaptivityHook {
    pub trigger: String,
    effect: Arc<HookFn>,
}

impl fmt::Debug for AdaptivityHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdaptivityHook").field("trigger", &self.trigger).finish_non_exhaustive()
    }
}

impl AdaptivityHook {
    pub fn new<F>(trigger: &str, effect: F) -> Self
    where
        F: Fn(&Workflow, &StageResults) -> Vec<Edit> + Send + Sync + 'static,
    {
        Self {
            trigger: trigger.to_string(),
            effect: Arc::new(effect),
        }
    }

    pub fn edits(&self, workflow: &Workflow, results: &StageResults) -> Vec<Edit> {
        (self.effect)(workflow, results)
    }
}

/// Fire `hook` against `snapshot` (task uid to current state) and return the
/// edited workflow. Either every edit applies and the result validates, or the
/// input is returned untouched through the error.
pub fn apply_hook(
    workflow: &Workflow,
    hook: &AdaptivityHook,
    snapshot: &BTreeMap<String, String>,
) -> Result<Workflow, WorkflowError> {
    let (p, s) = workflow
        .find_stage(&hook.trigger)
        .ok_or_else(|| WorkflowError::UnknownStage(hook.trigger.clone()))?;
    let pipeline = &workflow.pipelines[p];
    let stage = &pipeline.stages[s];
    let mut states = BTreeMap::new();
    for task in &stage.tasks {
        match snapshot.get(&task.uid) {
            Some(state) if is_final(state) => {
                states.insert(task.uid.clone(), state.clone());
            }
            _ => return Err(WorkflowError::TriggerNotFinal(stage.uid.clone())),
        }
    }
    let results = StageResults {
        pipeline: pipeline.uid.clone(),
        stage: stage.uid.clone(),
        states,
    };
    let edits = hook.edits(workflow, &results);
    apply_edits(workflow, &pipeline.uid, edits, snapshot)
}

pub fn apply_edits(
    workflow: &Workflow,
    own_pipeline: &str,
    edits: Vec<Edit>,
    snapshot: &BTreeMap<String, String>,
) -> Result<Workflow, WorkflowError> {
    let mut next = workflow.clone();
    for edit in edits {
        match edit {
            Edit::AppendStage { pipeline, stage } => {
                if pipeline != own_pipeline {
                    return Err(WorkflowError::IllegalEdit(format!(
                        "stage `{}` may only be appended to `{own_pipeline}`, not `{pipeline}`",
                        stage.uid
                    )));
                }
                let target = next
                    .pipelines
                    .iter_mut()
                    .find(|p| p.uid == pipeline)
                    .expect("own pipeline exists");
                target.stages.push(stage);
            }
            Edit::AppendPipeline(pipeline) => next.pipelines.push(pipeline),
            Edit::ModifyTask(description) => {
                let state = snapshot.get(&description.uid).map(String::as_str).unwrap_or(NEW);
                if state != NEW {
                    return Err(WorkflowError::IllegalEdit(format!(
                        "task `{}` is {state}; only NEW tasks may be modified",
                        description.uid
                    )));
                }
                let slot = next.task_mut(&description.uid).ok_or_else(|| {
                    WorkflowError::IllegalEdit(format!("task `{}` is not in the workflow", description.uid))
                })?;
                *slot = description;
            }
        }
    }
    let defects = validate_workflow(&next);
    if !defects.is_empty() {
        return Err(WorkflowError::ValidationFailed(defects));
    }
    Ok(next)
}
