use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::TaskDescription;
use crate::state::validate_uid;

/// A set of tasks that may run concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub uid: String,
    pub tasks: Vec<TaskDescription>,
}

/// Stages executed strictly one after the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub uid: String,
    pub stages: Vec<Stage>,
}

/// Independent pipelines executed concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workflow {
    pub uid: String,
    pub pipelines: Vec<Pipeline>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "defect")]
pub enum Defect {
    EmptyWorkflow,
    EmptyPipeline { pipeline: String },
    EmptyStage { stage: String },
    DuplicateUid { uid: String },
    InvalidUid { uid: String, reason: String },
    InvalidTask { task: String, problem: String },
}

/// Position of a task inside a workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaskPos {
    pub pipeline: usize,
    pub stage: usize,
    pub task: usize,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct WorkflowFile {
    workflow: Workflow,
}

impl Stage {
    pub fn new(uid: &str, tasks: Vec<TaskDescription>) -> Self {
        Self { uid: uid.to_string(), tasks }
    }
}

impl Pipeline {
    pub fn new(uid: &str, stages: Vec<Stage>) -> Self {
        Self { uid: uid.to_string(), stages }
    }
}

impl Workflow {
    pub fn new(uid: &str, pipelines: Vec<Pipeline>) -> Self {
        Self { uid: uid.to_string(), pipelines }
    }

    /// Parse a workflow document. JSON is accepted when the text starts with
    /// `{`, TOML otherwise. Both use a top-level `workflow` key.
    pub fn parse(text: &str) -> Result<Self, String> {
        let file: WorkflowFile = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            toml::from_str(text).map_err(|e| e.to_string())?
        };
        Ok(file.workflow)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&WorkflowFile { workflow: self.clone() }).expect("workflow serializes")
    }

    pub fn tasks(&self) -> impl Iterator<Item = (TaskPos, &TaskDescription)> {
        self.pipelines.iter().enumerate().flat_map(|(p, pipeline)| {
            pipeline.stages.iter().enumerate().flat_map(move |(s, stage)| {
                stage.tasks.iter().enumerate().map(move |(t, task)| {
                    (TaskPos { pipeline: p, stage: s, task: t }, task)
                })
            })
        })
    }

    pub fn task_count(&self) -> usize {
        self.tasks().count()
    }

    pub fn locate(&self, task_uid: &str) -> Option<TaskPos> {
        self.tasks().find(|(_, t)| t.uid == task_uid).map(|(pos, _)| pos)
    }

    pub fn task(&self, task_uid: &str) -> Option<&TaskDescription> {
        self.tasks().find(|(_, t)| t.uid == task_uid).map(|(_, t)| t)
    }

    pub fn task_mut(&mut self, task_uid: &str) -> Option<&mut TaskDescription> {
        self.pipelines
            .iter_mut()
            .flat_map(|p| p.stages.iter_mut())
            .flat_map(|s| s.tasks.iter_mut())
            .find(|t| t.uid == task_uid)
    }

    /// (pipeline index, stage index) of the stage with this uid.
    pub fn find_stage(&self, stage_uid: &str) -> Option<(usize, usize)> {
        self.pipelines.iter().enumerate().find_map(|(p, pipeline)| {
            pipeline
                .stages
                .iter()
                .position(|s| s.uid == stage_uid)
                .map(|s| (p, s))
        })
    }
}

/// Everything wrong with a workflow; empty when it may be run.
pub fn validate_workflow(workflow: &Workflow) -> Vec<Defect> {
    let mut defects = Vec::new();
    let mut seen = BTreeSet::new();
    let mut check = |uid: &str, defects: &mut Vec<Defect>| {
        if let Err(e) = validate_uid(uid) {
            defects.push(Defect::InvalidUid {
                uid: uid.to_string(),
                reason: e.to_string(),
            });
        }
        if !seen.insert(uid.to_string()) {
            defects.push(Defect::DuplicateUid { uid: uid.to_string() });
        }
    };

    check(&workflow.uid, &mut defects);
    if workflow.pipelines.is_empty() {
        defects.push(Defect::EmptyWorkflow);
    }
    for pipeline in &workflow.pipelines {
        check(&pipeline.uid, &mut defects);
        if pipeline.stages.is_empty() {
            defects.push(Defect::EmptyPipeline {
                pipeline: pipeline.uid.clone(),
            });
        }
        for stage in &pipeline.stages {
            check(&stage.uid, &mut defects);
            if stage.tasks.is_empty() {
                defects.push(Defect::EmptyStage { stage: stage.uid.clone() });
            }
            for task in &stage.tasks {
                check(&task.uid, &mut defects);
                for problem in task.problems() {
                    defects.push(Defect::InvalidTask {
                        task: task.uid.clone(),
                        problem,
                    });
                }
            }
        }
    }
    defects
}
