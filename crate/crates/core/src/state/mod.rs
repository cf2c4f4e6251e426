//! Entity state, event and error model.
//!
//! Every block coordinates through a shared [`Registry`]: entities (tasks,
//! pilots, jobs) move through ordered states, free-form events are bracketed
//! by the state before and after them, and errors are pinned to the state and
//! event in which they happened.

mod annotations;
mod model;
mod registry;
mod trace;
mod validate;

pub use annotations::{Annotation, SlotIds};
pub use model::{StateModel, Transition};
pub use registry::{ErrorRecord, Event, History, Registry, StateRecord};
pub use trace::{builtin_models, RecordType, Trace, TraceError, TraceLine};
pub use validate::{validate_trace, Violation};

use thiserror::Error;

/// Entity kinds and state names used by the built-in models.
pub mod names {
    pub const TASK: &str = "task";
    pub const PILOT: &str = "pilot";
    pub const JOB: &str = "job";

    pub const NEW: &str = "NEW";
    pub const BOUND: &str = "BOUND";
    pub const SCHEDULED: &str = "SCHEDULED";
    pub const EXECUTING: &str = "EXECUTING";
    pub const SUBMITTED: &str = "SUBMITTED";
    pub const ACTIVE: &str = "ACTIVE";
    pub const PENDING: &str = "PENDING";
    pub const RUNNING: &str = "RUNNING";
    pub const DONE: &str = "DONE";
    pub const FAILED: &str = "FAILED";
    pub const CANCELED: &str = "CANCELED";

    pub fn is_final(state: &str) -> bool {
        matches!(state, DONE | FAILED | CANCELED)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("entity kind `{0}` is already registered")]
    DuplicateKind(String),
    #[error("state list is empty")]
    EmptyStates,
    #[error("state `{0}` appears twice")]
    DuplicateState(String),
    #[error("final state `{0}` is not in the state list")]
    FinalNotInStates(String),
    #[error("model has no non-final state to start from")]
    NoInitialState,
    #[error("unknown entity kind `{0}`")]
    UnknownKind(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{0}` is already registered")]
    DuplicateEntity(String),
    #[error("invalid uid `{uid}`: {reason}")]
    InvalidUid { uid: String, reason: &'static str },
    #[error("`{uid}`: state `{state}` is not part of the {kind} model")]
    UnknownState { uid: String, kind: String, state: String },
    #[error("`{uid}`: {from} -> {to} skips or reverses the state order")]
    OrderViolation { uid: String, from: String, to: String },
    #[error("`{uid}` is in final state {state}")]
    FinalStateFrozen { uid: String, state: String },
    #[error("`{uid}` is in final state {state}; no events may follow")]
    EventAfterFinal { uid: String, state: String },
}

/// Checks the uid rules: nonempty, at most 256 characters, no path separators
/// and nothing that could escape a directory when used as a filename.
pub fn validate_uid(uid: &str) -> Result<(), StateError> {
    let reason = if uid.is_empty() {
        Some("empty")
    } else if uid.chars().count() > 256 {
        Some("longer than 256 characters")
    } else if uid.contains(['/', '\\']) {
        Some("contains a path separator")
    } else if uid == "." || uid == ".." {
        Some("reserved path name")
    } else if uid.chars().any(char::is_control) {
        Some("contains control characters")
    } else {
        None
    };
    match reason {
        Some(reason) => Err(StateError::InvalidUid {
            uid: uid.to_string(),
            reason,
        }),
        None => Ok(()),
    }
}
