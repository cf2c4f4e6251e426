use std::collections::BTreeMap;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use super::{AccessError, Backend, BackendKind, JobDescription, JobUpdate, QueueInfo};
use crate::clock::{secs_to_ns_ceil, TimeMode};
use crate::state::names::{CANCELED, DONE, FAILED};

/// How long a terminated process gets before it is killed outright.
pub const CANCEL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug)]
enum Running {
    Process(Child),
    Simulated { end_ns: u64 },
}

/// Jobs run immediately on this host, with no queue in front of them.
///
/// Under real time each job is a child process. Under virtual time nothing is
/// spawned: the job occupies its cores for its expected runtime.
#[derive(Debug)]
pub struct LocalBackend {
    resource_id: String,
    cores: u32,
    gpus: u32,
    mode: TimeMode,
    running: BTreeMap<String, Running>,
    outbox: Vec<JobUpdate>,
}

impl LocalBackend {
    pub fn new(resource_id: &str, cores: u32, gpus: u32, mode: TimeMode) -> Self {
        Self {
            resource_id: resource_id.to_string(),
            cores,
            gpus,
            mode,
            running: BTreeMap::new(),
            outbox: Vec::new(),
        }
    }

    fn spawn(&self, description: &JobDescription) -> Result<Child, AccessError> {
        Command::new(&description.command[0])
            .args(&description.command[1..])
            .current_dir(&description.working_dir)
            .envs(&description.environment)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| AccessError::BackendUnavailable {
                resource: self.resource_id.clone(),
                reason: format!("cannot start `{}`: {e}", description.command[0]),
            })
    }
}

fn finished(uid: &str, at_ns: u64, exit_code: Option<i32>) -> JobUpdate {
    JobUpdate::Finished {
        uid: uid.to_string(),
        at_ns,
        state: if exit_code == Some(0) { DONE } else { FAILED },
        exit_code,
    }
}

/// SIGTERM, then SIGKILL once the grace period runs out.
pub(crate) fn terminate(child: &mut Child, grace: Duration) {
    if let Ok(Some(_)) = child.try_wait() {
        return;
    }
    // SAFETY: kill(2) on a pid we spawned and have not reaped yet.
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
    }
    let deadline = Instant::now() + grace;
    while Instant::now() < deadline {
        if let Ok(Some(_)) = child.try_wait() {
            return;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl Backend for LocalBackend {
    fn resource_id(&self) -> &str {
        &self.resource_id
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn capacity(&self) -> (u32, u32) {
        (self.cores, self.gpus)
    }

    fn submit(&mut self, uid: &str, description: &JobDescription, now_ns: u64) -> Result<(), AccessError> {
        let running = match self.mode {
            TimeMode::Real => Running::Process(self.spawn(description)?),
            TimeMode::Virtual => Running::Simulated {
                end_ns: now_ns + secs_to_ns_ceil(description.simulated_runtime_s()),
            },
        };
        self.running.insert(uid.to_string(), running);
        self.outbox.push(JobUpdate::Started {
            uid: uid.to_string(),
            at_ns: now_ns,
        });
        Ok(())
    }

    fn poll(&mut self, now_ns: u64) -> Vec<JobUpdate> {
        let mut done = Vec::new();
        for (uid, running) in self.running.iter_mut() {
            match running {
                Running::Process(child) => match child.try_wait() {
                    Ok(Some(status)) => done.push((uid.clone(), now_ns, status.code())),
                    Ok(None) => {}
                    Err(_) => done.push((uid.clone(), now_ns, None)),
                },
                Running::Simulated { end_ns } if *end_ns <= now_ns => done.push((uid.clone(), *end_ns, Some(0))),
                Running::Simulated { .. } => {}
            }
        }
        done.sort_by_key(|(_, at, _)| *at);
        for (uid, at, code) in done {
            self.running.remove(&uid);
            self.outbox.push(finished(&uid, at, code));
        }
        std::mem::take(&mut self.outbox)
    }

    fn cancel(&mut self, uid: &str, now_ns: u64) -> Result<JobUpdate, AccessError> {
        let running = self
            .running
            .remove(uid)
            .ok_or_else(|| AccessError::AlreadyFinal(uid.to_string()))?;
        if let Running::Process(mut child) = running {
            terminate(&mut child, CANCEL_GRACE);
        }
        Ok(JobUpdate::Finished {
            uid: uid.to_string(),
            at_ns: now_ns,
            state: CANCELED,
            exit_code: None,
        })
    }

    fn queue_info(&mut self, cores: u32, _now_ns: u64) -> Result<QueueInfo, AccessError> {
        if cores == 0 || cores > self.cores {
            return Err(AccessError::CapacityExceeded {
                resource: self.resource_id.clone(),
                unit: "cores",
                requested: cores,
                capacity: self.cores,
            });
        }
        Ok(QueueInfo {
            resource_id: self.resource_id.clone(),
            pending_jobs: 0,
            running_jobs: self.running.len(),
            estimated_wait_s: 0.0,
        })
    }

    fn next_deadline(&self) -> Option<u64> {
        self.running
            .values()
            .filter_map(|r| match r {
                Running::Simulated { end_ns } => Some(*end_ns),
                Running::Process(_) => None,
            })
            .min()
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        for running in self.running.values_mut() {
            if let Running::Process(child) = running {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}
