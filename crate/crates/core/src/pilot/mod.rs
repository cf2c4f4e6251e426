//! Pilots: resource containers acquired through one job each, inside which
//! units are scheduled onto core and GPU slots and run in their own sandbox.

mod launch;
mod runtime;
mod slots;
mod staging;

pub use launch::{
    base_environment, resolve_executable, Execution, LaunchSpec, Launcher, MpiLaunch, ProcessLauncher,
    SimulatedLauncher, BASE_ENV_VARS,
};
pub use runtime::{ComputeUnit, Pilot, PilotConfig, PilotInfo, PilotRuntime};
pub use slots::{Request, SlotMap, UnitScheduler};
pub use staging::{resolve_source, stage_in, stage_out};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::AccessError;
use crate::state::StateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotDescription {
    pub resource_id: String,
    pub cores: u32,
    #[serde(default)]
    pub gpus: u32,
    pub walltime_s: f64,
    #[serde(default = "default_queue")]
    pub queue: String,
}

fn default_queue() -> String {
    "default".into()
}

#[derive(Debug, Error)]
pub enum PilotError {
    #[error("pilot `{pilot}` was rejected: {reason}")]
    SubmissionRejected { pilot: String, reason: String },
    #[error("unit `{unit}` needs {cpus} cores and {gpus} gpus, more than pilot `{pilot}` has")]
    UnitTooLarge {
        unit: String,
        pilot: String,
        cpus: u32,
        gpus: u32,
    },
    #[error("pilot `{0}` is final")]
    PilotFinal(String),
    #[error("unknown pilot `{0}`")]
    UnknownPilot(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("unit `{0}` was already submitted")]
    DuplicateUnit(String),
    #[error("`{0}` is already final")]
    AlreadyFinal(String),
    #[error("unit `{unit}` is {state}, not BOUND")]
    NotBound { unit: String, state: String },
    #[error("staging for `{unit}` failed: {reason}")]
    StagingFailed { unit: String, reason: String },
    #[error("`{unit}` could not be spawned: {reason}")]
    SpawnFailed { unit: String, reason: String },
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    State(#[from] StateError),
}
