//! Uniform job interface over heterogeneous execution backends.
//!
//! A [`Backend`] knows how to start, poll and cancel jobs on one resource.
//! [`ResourceAccess`] owns a set of backends, hands out job uids and mirrors
//! every job into the shared state registry, so callers above this layer see
//! the same job model whether the work runs as a local process or inside the
//! batch simulator.

pub(crate) mod local;
mod simbatch;

pub use local::LocalBackend;
pub use simbatch::SimBatchBackend;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimError;
use crate::state::names::{is_final, CANCELED, DONE, FAILED, JOB, PENDING, RUNNING};
use crate::state::{Registry, StateError};

#[derive(Debug, Error)]
pub enum AccessError {
    #[error("{resource}: request for {requested} {unit} exceeds capacity {capacity}")]
    CapacityExceeded {
        resource: String,
        unit: &'static str,
        requested: u32,
        capacity: u32,
    },
    #[error("{resource}: backend unavailable: {reason}")]
    BackendUnavailable { resource: String, reason: String },
    #[error("invalid job description: {0}")]
    InvalidDescription(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` is already final")]
    AlreadyFinal(String),
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("resource `{0}` is already attached")]
    DuplicateResource(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Local,
    Simbatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDescription {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub cores: u32,
    #[serde(default)]
    pub gpus: u32,
    pub walltime_s: f64,
    pub queue: String,
    pub working_dir: PathBuf,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    /// How long a simulated job occupies its cores. Defaults to the walltime.
    #[serde(default)]
    pub expected_runtime_s: Option<f64>,
}

impl JobDescription {
    pub fn new(command: &[&str], cores: u32, walltime_s: f64) -> Self {
        Self {
            command: command.iter().map(|s| s.to_string()).collect(),
            cores,
            gpus: 0,
            walltime_s,
            queue: "default".into(),
            working_dir: std::env::temp_dir(),
            environment: BTreeMap::new(),
            expected_runtime_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), AccessError> {
        let bad = |m: String| Err(AccessError::InvalidDescription(m));
        if self.command.first().is_none_or(|c| c.is_empty()) {
            return bad("command is empty".into());
        }
        if self.cores == 0 {
            return bad("cores must be positive".into());
        }
        if !(self.walltime_s.is_finite() && self.walltime_s > 0.0) {
            return bad(format!("walltime {} must be positive", self.walltime_s));
        }
        if let Some(r) = self.expected_runtime_s {
            if !(r.is_finite() && r >= 0.0) {
                return bad(format!("expected runtime {r} must be non-negative"));
            }
        }
        Ok(())
    }

    /// Simulated occupancy: the expected runtime, never beyond the walltime.
    pub fn simulated_runtime_s(&self) -> f64 {
        self.expected_runtime_s.unwrap_or(self.walltime_s).min(self.walltime_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub uid: String,
    pub resource_id: String,
    pub description: JobDescription,
    pub state: String,
    pub submit_ns: u64,
    pub start_ns: Option<u64>,
    pub end_ns: Option<u64>,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueInfo {
    pub resource_id: String,
    pub pending_jobs: usize,
    pub running_jobs: usize,
    pub estimated_wait_s: f64,
}

/// A change in a job's backend state, reported by [`Backend::poll`].
#[derive(Debug, Clone, PartialEq)]
pub enum JobUpdate {
    Started { uid: String, at_ns: u64 },
    Finished {
        uid: String,
        at_ns: u64,
        state: &'static str,
        exit_code: Option<i32>,
    },
}

impl JobUpdate {
    pub fn uid(&self) -> &str {
        match self {
            JobUpdate::Started { uid, .. } | JobUpdate::Finished { uid, .. } => uid,
        }
    }
}

/// One execution backend. Callers poll; nothing depends on push.
pub trait Backend: Send + fmt::Debug {
    fn resource_id(&self) -> &str;

    fn kind(&self) -> BackendKind;

    /// (cores, gpus)
    fn capacity(&self) -> (u32, u32);

    fn submit(&mut self, uid: &str, description: &JobDescription, now_ns: u64) -> Result<(), AccessError>;

    /// State changes since the last poll, in the order they happened.
    fn poll(&mut self, now_ns: u64) -> Vec<JobUpdate>;

    /// Stop a job and report its final update.
    fn cancel(&mut self, uid: &str, now_ns: u64) -> Result<JobUpdate, AccessError>;

    fn queue_info(&mut self, cores: u32, now_ns: u64) -> Result<QueueInfo, AccessError>;

    /// Earliest instant at which a poll could report something new, when known.
    fn next_deadline(&self) -> Option<u64>;

    fn check_capacity(&self, description: &JobDescription) -> Result<(), AccessError> {
        let (cores, gpus) = self.capacity();
        let exceeded = |unit, requested, capacity| AccessError::CapacityExceeded {
            resource: self.resource_id().to_string(),
            unit,
            requested,
            capacity,
        };
        if description.cores > cores {
            return Err(exceeded("cores", description.cores, cores));
        }
        if description.gpus > gpus {
            return Err(exceeded("gpus", description.gpus, gpus));
        }
        Ok(())
    }
}

/// The job layer: many backends, one job model.
#[derive(Debug)]
pub struct ResourceAccess {
    registry: Arc<Registry>,
    backends: BTreeMap<String, Mutex<Box<dyn Backend>>>,
    jobs: Mutex<BTreeMap<String, Job>>,
    next_id: AtomicU64,
}

impl ResourceAccess {
    pub fn new(registry: Arc<Registry>) -> Self {
        Self {
            registry,
            backends: BTreeMap::new(),
            jobs: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn attach(&mut self, backend: Box<dyn Backend>) -> Result<(), AccessError> {
        let id = backend.resource_id().to_string();
        if self.backends.contains_key(&id) {
            return Err(AccessError::DuplicateResource(id));
        }
        self.backends.insert(id, Mutex::new(backend));
        Ok(())
    }

    pub fn resources(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    pub fn capacity(&self, resource: &str) -> Result<(u32, u32), AccessError> {
        Ok(self.backend(resource)?.lock().unwrap().capacity())
    }

    fn backend(&self, resource: &str) -> Result<&Mutex<Box<dyn Backend>>, AccessError> {
        self.backends
            .get(resource)
            .ok_or_else(|| AccessError::UnknownResource(resource.to_string()))
    }

    pub fn submit_job(&self, resource: &str, description: JobDescription) -> Result<Job, AccessError> {
        description.validate()?;
        let backend = self.backend(resource)?;
        let mut backend = backend.lock().unwrap();
        backend.check_capacity(&description)?;
        let now = self.registry.now_ns();
        // Anything that happened before this submission must be applied first.
        let earlier = backend.poll(now);
        self.apply(&earlier)?;

        let uid = format!("job.{:06}", self.next_id.fetch_add(1, Ordering::Relaxed));
        backend.submit(&uid, &description, now)?;
        self.registry.register_entity(&uid, JOB)?;
        let record = self.registry.advance(&uid, PENDING)?;
        let job = Job {
            uid: uid.clone(),
            resource_id: resource.to_string(),
            description,
            state: PENDING.into(),
            submit_ns: record.ts_ns,
            start_ns: None,
            end_ns: None,
            exit_code: None,
        };
        self.jobs.lock().unwrap().insert(uid.clone(), job);
        let immediate = backend.poll(now);
        self.apply(&immediate)?;
        drop(backend);
        self.job(&uid)
    }

    /// Current job state after asking its backend.
    pub fn job_state(&self, uid: &str) -> Result<Job, AccessError> {
        let resource = self.job(uid)?.resource_id;
        let mut backend = self.backend(&resource)?.lock().unwrap();
        let updates = backend.poll(self.registry.now_ns());
        self.apply(&updates)?;
        drop(backend);
        self.job(uid)
    }

    /// Last known state without polling.
    pub fn job(&self, uid: &str) -> Result<Job, AccessError> {
        self.jobs
            .lock()
            .unwrap()
            .get(uid)
            .cloned()
            .ok_or_else(|| AccessError::UnknownJob(uid.to_string()))
    }

    pub fn cancel_job(&self, uid: &str) -> Result<Job, AccessError> {
        let job = self.job(uid)?;
        let mut backend = self.backend(&job.resource_id)?.lock().unwrap();
        let updates = backend.poll(self.registry.now_ns());
        self.apply(&updates)?;
        if is_final(&self.job(uid)?.state) {
            return Err(AccessError::AlreadyFinal(uid.to_string()));
        }
        let update = backend.cancel(uid, self.registry.now_ns())?;
        self.apply(&[update])?;
        drop(backend);
        self.job(uid)
    }

    pub fn queue_info(&self, resource: &str, cores: u32) -> Result<QueueInfo, AccessError> {
        let mut backend = self.backend(resource)?.lock().unwrap();
        let now = self.registry.now_ns();
        let updates = backend.poll(now);
        self.apply(&updates)?;
        backend.queue_info(cores, now)
    }

    /// Poll every backend and apply what changed. Returns the uids of jobs
    /// whose state moved.
    pub fn progress(&self) -> Result<Vec<String>, AccessError> {
        let mut changed = Vec::new();
        for backend in self.backends.values() {
            let mut backend = backend.lock().unwrap();
            let updates = backend.poll(self.registry.now_ns());
            self.apply(&updates)?;
            changed.extend(updates.iter().map(|u| u.uid().to_string()));
        }
        Ok(changed)
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.backends
            .values()
            .filter_map(|b| b.lock().unwrap().next_deadline())
            .min()
    }

    fn apply(&self, updates: &[JobUpdate]) -> Result<(), AccessError> {
        let mut jobs = self.jobs.lock().unwrap();
        for update in updates {
            // Background work inside a simulator is not ours to track.
            let Some(job) = jobs.get_mut(update.uid()) else {
                continue;
            };
            if is_final(&job.state) {
                continue;
            }
            match update {
                JobUpdate::Started { at_ns, .. } => {
                    if job.state == PENDING {
                        self.registry.advance(&job.uid, RUNNING)?;
                        job.state = RUNNING.into();
                        job.start_ns = Some(*at_ns);
                    }
                }
                JobUpdate::Finished {
                    at_ns, state, exit_code, ..
                } => {
                    let target = *state;
                    debug_assert!(matches!(target, DONE | FAILED | CANCELED));
                    if let Some(code) = exit_code.filter(|c| *c != 0) {
                        self.registry.record_error(&job.uid, "EXIT_NONZERO", &format!("exit code {code}"))?;
                    }
                    self.registry.advance(&job.uid, target)?;
                    job.state = target.into();
                    job.end_ns = Some(*at_ns);
                    job.exit_code = *exit_code;
                }
            }
        }
        Ok(())
    }
}
