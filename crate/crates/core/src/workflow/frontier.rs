use super::model::Workflow;
use super::WorkflowError;
use crate::state::names::{is_final, DONE, NEW};
use crate::state::Registry;

/// Tasks that may be submitted now, in workflow order.
///
/// A task is ready when it is NEW and every task in every earlier stage of its
/// pipeline is DONE. Pipelines are independent: a failure freezes only the
/// pipeline it happened in.
pub fn ready_frontier(workflow: &Workflow, registry: &Registry) -> Result<Vec<String>, WorkflowError> {
    frontier_with(workflow, |uid| registry.current_state(uid).ok())
}

/// [`ready_frontier`] over any state lookup.
pub fn frontier_with<F>(workflow: &Workflow, state_of: F) -> Result<Vec<String>, WorkflowError>
where
    F: Fn(&str) -> Option<String>,
{
    let mut ready = Vec::new();
    for pipeline in &workflow.pipelines {
        for stage in &pipeline.stages {
            let states = stage
                .tasks
                .iter()
                .map(|t| state_of(&t.uid).ok_or_else(|| WorkflowError::UnregisteredTask(t.uid.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            if states.iter().all(|s| s == DONE) {
                continue;
            }
            if states.iter().any(|s| !is_final(s)) {
                ready.extend(
                    stage
                        .tasks
                        .iter()
                        .zip(&states)
                        .filter(|(_, s)| *s == NEW)
                        .map(|(t, _)| t.uid.clone()),
                );
            }
            break;
        }
    }
    Ok(ready)
}

/// Pipelines whose earliest unfinished stage is fully final with at least one
/// task not DONE. Nothing after that stage may run.
pub fn frozen_pipelines<F>(workflow: &Workflow, state_of: F) -> Vec<usize>
where
    F: Fn(&str) -> Option<String>,
{
    let mut frozen = Vec::new();
    for (idx, pipeline) in workflow.pipelines.iter().enumerate() {
        for stage in &pipeline.stages {
            let states: Vec<Option<String>> = stage.tasks.iter().map(|t| state_of(&t.uid)).collect();
            if states.iter().all(|s| s.as_deref() == Some(DONE)) {
                continue;
            }
            if states.iter().all(|s| s.as_deref().is_some_and(is_final)) {
                frozen.push(idx);
            }
            break;
        }
    }
    frozen
}
