//! Integration with other systems: a directory of task files and an HTTP
//! service that presents the pilot pool as a resource queue.

mod capacity;
mod exchange;
mod service;

pub use capacity::{aggregate_capacity, CapacitySummary, PilotCapacity};
pub use exchange::{
    canonical_json, decode_record, decode_task, encode_task, export_tasks, import_tasks, task_path, Reject,
    SCHEMA_VERSION, TASK_FILE_SUFFIX,
};
pub use service::{router, serve, ServiceHandle, SharedManager};

use std::path::PathBuf;

use thiserror::Error;

use crate::state::StateError;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} already exists")]
    DuplicateFile(PathBuf),
    #[error("cannot serve on {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error(transparent)]
    State(#[from] StateError),
}
