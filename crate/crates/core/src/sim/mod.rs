//! Simulated batch cluster behind the `simbatch` backend and the queue-time
//! estimates used for resource selection.

mod cluster;
mod model;
mod scenario;

pub use cluster::{BackgroundJob, SimCluster, SimEvent, SimEventKind, SimJob, SimJobStatus};
pub use model::{QueueTimeModel, TableRow};
pub use scenario::{Scenario, ScenarioEntry};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("clock regression: simulator at {now} s, asked for {requested} s")]
    ClockRegression { now: f64, requested: f64 },
    #[error("{resource}: request for {requested} cores exceeds capacity {capacity}")]
    RequestExceedsCapacity { resource: String, requested: u32, capacity: u32 },
    #[error("background arrival at {arrival_s} s is before the simulator clock {clock_s} s")]
    ArrivalInPast { arrival_s: f64, clock_s: f64 },
    #[error("job `{0}` already exists")]
    DuplicateJob(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` already finished")]
    AlreadyFinal(String),
}
