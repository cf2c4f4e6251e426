//! Workload management: pick resources, split workloads across them, size
//! pilots, and bind tasks to pilots only once those pilots are running.

mod catalog;
mod manager;
mod plan;

pub use catalog::{Catalog, ResourceCatalogEntry};
pub use manager::{Placement, WlmConfig, WorkloadManager};
pub use plan::{
    bind, derive_pilot_description, fits, partition, required_walltime_s, select_resources, Binding, PartitionPlan,
    Workload, DEFAULT_CONCURRENCY_CAP, WALLTIME_SAFETY_FACTOR,
};

pub use crate::pilot::PilotDescription;

use thiserror::Error;

use crate::access::AccessError;
use crate::clock::Stalled;
use crate::pilot::PilotError;
use crate::sim::SimError;
use crate::state::StateError;

#[derive(Debug, Error)]
pub enum WlmError {
    #[error("workload has no tasks")]
    EmptyWorkload,
    #[error("no resource can run every task of the workload")]
    NoFeasibleResource,
    #[error("task `{0}` fits none of the chosen resources")]
    UnplaceableTask(String),
    #[error("task `{task}` does not fit on resource `{resource}`")]
    InfeasibleOnResource { task: String, resource: String },
    #[error("pilot `{pilot}` ended {state} with tasks still waiting: {tasks:?}")]
    PilotFailed {
        pilot: String,
        state: String,
        tasks: Vec<String>,
    },
    #[error("task `{task}` is {state}, not NEW")]
    TaskNotNew { task: String, state: String },
    #[error("task `{task}` is invalid: {problems:?}")]
    InvalidTask { task: String, problems: Vec<String> },
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Stalled(#[from] Stalled),
}
