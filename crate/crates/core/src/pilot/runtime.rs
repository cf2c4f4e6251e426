use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use super::launch::{base_environment, Execution, LaunchSpec, Launcher, ProcessLauncher, SimulatedLauncher};
use super::slots::{Request, SlotMap, UnitScheduler};
use super::staging::{stage_in, stage_out};
use super::{PilotDescription, PilotError};
use crate::access::{AccessError, JobDescription, ResourceAccess};
use crate::clock::{ns_to_secs, secs_to_ns_ceil, TimeMode};
use crate::state::names::*;
use crate::state::{Annotation, Registry, SlotIds};
use crate::workflow::TaskDescription;

#[derive(Debug, Clone)]
pub struct PilotConfig {
    /// Sandboxes live under `<run_dir>/<pilot>/<unit>/`.
    pub run_dir: PathBuf,
    pub backfill: bool,
    /// Treat memory as a third scheduling dimension with this per-pilot limit.
    pub memory_limit_mb: Option<u64>,
    pub base_env: BTreeMap<String, String>,
    pub launcher: Arc<dyn Launcher>,
}

impl PilotConfig {
    /// Real processes under a real clock, simulated units under a virtual one.
    pub fn for_mode(mode: TimeMode, run_dir: PathBuf) -> Self {
        let launcher: Arc<dyn Launcher> = match mode {
            TimeMode::Real => Arc::new(ProcessLauncher::default()),
            TimeMode::Virtual => Arc::new(SimulatedLauncher),
        };
        Self {
            run_dir,
            backfill: false,
            memory_limit_mb: None,
            base_env: base_environment(),
            launcher,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Queued,
    Executing,
    Finished,
}

/// A task incarnated on a pilot. It shares the task's uid and states.
#[derive(Debug)]
pub struct ComputeUnit {
    pub uid: String,
    pub task: TaskDescription,
    pub sandbox: PathBuf,
    pub assigned_slots: Option<SlotIds>,
    pub exit_code: Option<i32>,
    seq: u64,
    phase: Phase,
    execution: Option<Box<dyn Execution>>,
}

impl ComputeUnit {
    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }
}

#[derive(Debug)]
pub struct Pilot {
    pub uid: String,
    pub description: PilotDescription,
    pub job_uid: Option<String>,
    pub activated_ns: Option<u64>,
    pub expires_ns: Option<u64>,
    state: String,
    scheduler: UnitScheduler<String>,
    units: BTreeMap<String, ComputeUnit>,
}

impl Pilot {
    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn is_active(&self) -> bool {
        self.state == ACTIVE
    }

    pub fn units(&self) -> impl Iterator<Item = &ComputeUnit> {
        self.units.values()
    }

    pub fn slots(&self) -> &SlotMap<String> {
        self.scheduler.slots()
    }

    /// Seconds of walltime left at `now_ns`; the full walltime before activation.
    pub fn remaining_walltime_s(&self, now_ns: u64) -> f64 {
        match (self.activated_ns, self.expires_ns) {
            (Some(_), Some(expires)) => ns_to_secs(expires.saturating_sub(now_ns)),
            _ if is_final(&self.state) => 0.0,
            _ => self.description.walltime_s,
        }
    }

    /// Expected core-seconds still owed to units that are not finished.
    pub fn outstanding_work(&self) -> f64 {
        self.units.values().filter(|u| !u.is_finished()).map(|u| u.task.work()).sum()
    }

    pub fn info(&self) -> PilotInfo {
        let slots = self.scheduler.slots();
        PilotInfo {
            uid: self.uid.clone(),
            resource_id: self.description.resource_id.clone(),
            state: self.state.clone(),
            cores: self.description.cores,
            gpus: self.description.gpus,
            free_cores: slots.free_cpus(),
            free_gpus: slots.free_gpus(),
            walltime_s: self.description.walltime_s,
            activated_ns: self.activated_ns,
            expires_ns: self.expires_ns,
            job_uid: self.job_uid.clone(),
            units: self.units.len(),
        }
    }
}

/// Point-in-time view of a pilot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotInfo {
    pub uid: String,
    pub resource_id: String,
    pub state: String,
    pub cores: u32,
    pub gpus: u32,
    pub free_cores: u32,
    pub free_gpus: u32,
    pub walltime_s: f64,
    pub activated_ns: Option<u64>,
    pub expires_ns: Option<u64>,
    pub job_uid: Option<String>,
    pub units: usize,
}

/// Acquires pilots through the job layer and runs units inside them.
///
/// One owner drives [`PilotRuntime::progress`]; every pilot's slot map is
/// only touched from there.
#[derive(Debug)]
pub struct PilotRuntime {
    registry: Arc<Registry>,
    access: Arc<ResourceAccess>,
    config: PilotConfig,
    pilots: BTreeMap<String, Pilot>,
    unit_pilot: BTreeMap<String, String>,
    next_pilot: u64,
    next_seq: u64,
}

impl PilotRuntime {
    pub fn new(access: Arc<ResourceAccess>, config: PilotConfig) -> Self {
        Self {
            registry: access.registry().clone(),
            access,
            config,
            pilots: BTreeMap::new(),
            unit_pilot: BTreeMap::new(),
            next_pilot: 1,
            next_seq: 0,
        }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn access(&self) -> &Arc<ResourceAccess> {
        &self.access
    }

    pub fn config(&self) -> &PilotConfig {
        &self.config
    }

    pub fn pilot(&self, uid: &str) -> Option<&Pilot> {
        self.pilots.get(uid)
    }

    pub fn pilots(&self) -> impl Iterator<Item = &Pilot> {
        self.pilots.values()
    }

    pub fn infos(&self) -> Vec<PilotInfo> {
        self.pilots.values().map(Pilot::info).collect()
    }

    pub fn unit(&self, uid: &str) -> Option<&ComputeUnit> {
        let pilot = self.unit_pilot.get(uid)?;
        self.pilots[pilot].units.get(uid)
    }

    pub fn pilot_of(&self, unit: &str) -> Option<&str> {
        self.unit_pilot.get(unit).map(String::as_str)
    }

    fn pilot_mut(&mut self, uid: &str) -> Result<&mut Pilot, PilotError> {
        self.pilots
            .get_mut(uid)
            .ok_or_else(|| PilotError::UnknownPilot(uid.to_string()))
    }

    fn set_pilot_state(&mut self, uid: &str, state: &str) -> Result<u64, PilotError> {
        let record = self.registry.advance(uid, state)?;
        self.pilot_mut(uid)?.state = state.to_string();
        Ok(record.ts_ns)
    }

    /// Request the pilot's resources as one job. Local pilots become ACTIVE
    /// before this returns; queued ones on a later [`progress`](Self::progress).
    pub fn submit_pilot(&mut self, description: PilotDescription) -> Result<String, PilotError> {
        let uid = format!("pilot.{:04}", self.next_pilot);
        self.next_pilot += 1;
        self.registry.register_entity(&uid, PILOT)?;
        self.registry.record_event(
            &uid,
            &Annotation::Walltime {
                secs: description.walltime_s,
            }
            .to_string(),
        )?;
        let mut slots = SlotMap::new(description.cores, description.gpus);
        if let Some(limit) = self.config.memory_limit_mb {
            slots = slots.with_memory_limit(limit);
        }
        let pilot = Pilot {
            uid: uid.clone(),
            description: description.clone(),
            job_uid: None,
            activated_ns: None,
            expires_ns: None,
            state: NEW.into(),
            scheduler: UnitScheduler::new(slots, self.config.backfill),
            units: BTreeMap::new(),
        };
        self.pilots.insert(uid.clone(), pilot);

        let walltime = format!("{}", description.walltime_s);
        let mut job = JobDescription::new(&["sleep", &walltime], description.cores, description.walltime_s);
        job.gpus = description.gpus;
        job.queue = description.queue.clone();
        job.working_dir = self.config.run_dir.clone();
        let submitted = std::fs::create_dir_all(&job.working_dir)
            .map_err(|e| AccessError::BackendUnavailable {
                resource: description.resource_id.clone(),
                reason: format!("cannot create {}: {e}", job.working_dir.display()),
            })
            .and_then(|()| self.access.submit_job(&description.resource_id, job));
        let job = match submitted {
            Ok(job) => job,
            Err(e) => {
                self.registry.record_error(&uid, "SUBMISSION_REJECTED", &e.to_string())?;
                self.set_pilot_state(&uid, FAILED)?;
                return Err(PilotError::SubmissionRejected {
                    pilot: uid,
                    reason: e.to_string(),
                });
            }
        };
        self.registry
            .record_event(&uid, &Annotation::Job { job: job.uid.clone() }.to_string())?;
        self.set_pilot_state(&uid, SUBMITTED)?;
        self.pilot_mut(&uid)?.job_uid = Some(job.uid);
        self.sync_pilot(&uid)?;
        Ok(uid)
    }

    /// Hand bound tasks to a pilot. All are checked before any is queued.
    pub fn submit_units(&mut self, pilot: &str, tasks: Vec<TaskDescription>) -> Result<Vec<String>, PilotError> {
        let p = self.pilots.get(pilot).ok_or_else(|| PilotError::UnknownPilot(pilot.to_string()))?;
        if is_final(&p.state) {
            return Err(PilotError::PilotFinal(pilot.to_string()));
        }
        for task in &tasks {
            let request = self.request_for(task);
            if !p.scheduler.slots().can_ever_fit(&request) {
                return Err(PilotError::UnitTooLarge {
                    unit: task.uid.clone(),
                    pilot: pilot.to_string(),
                    cpus: task.cpu_count,
                    gpus: task.gpu_count,
                });
            }
            if self.unit_pilot.contains_key(&task.uid) {
                return Err(PilotError::DuplicateUnit(task.uid.clone()));
            }
            let state = self.registry.current_state(&task.uid)?;
            if state != BOUND {
                return Err(PilotError::NotBound {
                    unit: task.uid.clone(),
                    state,
                });
            }
        }
        let mut uids = Vec::with_capacity(tasks.len());
        for task in tasks {
            let request = self.request_for(&task);
            let seq = self.next_seq;
            self.next_seq += 1;
            let uid = task.uid.clone();
            let sandbox = self.config.run_dir.join(pilot).join(&uid);
            let p = self.pilots.get_mut(pilot).expect("checked above");
            p.scheduler.enqueue(uid.clone(), request).expect("checked above");
            p.units.insert(
                uid.clone(),
                ComputeUnit {
                    uid: uid.clone(),
                    task,
                    sandbox,
                    assigned_slots: None,
                    exit_code: None,
                    seq,
                    phase: Phase::Queued,
                    execution: None,
                },
            );
            self.unit_pilot.insert(uid.clone(), pilot.to_string());
            uids.push(uid);
        }
        self.dispatch(pilot)?;
        Ok(uids)
    }

    fn request_for(&self, task: &TaskDescription) -> Request {
        Request {
            cpus: task.cpu_count,
            gpus: task.gpu_count,
            memory_mb: if self.config.memory_limit_mb.is_some() { task.memory_mb } else { 0 },
        }
    }

    /// Assign slots to whatever the policy admits now and mark those units
    /// SCHEDULED. Nothing happens unless the pilot is ACTIVE.
    pub fn schedule_tick(&mut self, pilot: &str) -> Result<Vec<(String, SlotIds)>, PilotError> {
        let now = self.registry.now_ns();
        let p = self.pilot_mut(pilot)?;
        if !p.is_active() || p.expires_ns.is_some_and(|e| now >= e) {
            return Ok(Vec::new());
        }
        let assigned = p.scheduler.tick();
        for (unit, ids) in &assigned {
            self.registry.advance(unit, SCHEDULED)?;
            self.registry.record_event(unit, &Annotation::Slots(ids.clone()).to_string())?;
            let u = self.pilot_mut(pilot)?.units.get_mut(unit).expect("queued unit is known");
            u.assigned_slots = Some(ids.clone());
        }
        Ok(assigned)
    }

    /// Prepare the sandbox and start a SCHEDULED unit. The exit code arrives
    /// through [`progress`](Self::progress). Failures are also recorded on
    /// the task, which ends FAILED.
    pub fn execute_unit(&mut self, pilot: &str, unit: &str) -> Result<(), PilotError> {
        let run_dir = self.config.run_dir.clone();
        let base_env = self.config.base_env.clone();
        let launcher = self.config.launcher.clone();
        let now = self.registry.now_ns();
        let p = self.pilot_mut(pilot)?;
        let u = p
            .units
            .get_mut(unit)
            .ok_or_else(|| PilotError::UnknownUnit(unit.to_string()))?;
        let slots = u.assigned_slots.clone().unwrap_or_default();

        let staged = std::fs::create_dir_all(&u.sandbox)
            .map_err(|e| format!("{}: {e}", u.sandbox.display()))
            .and_then(|()| stage_in(&u.task.input_staging, &run_dir, &u.sandbox));
        if let Err(reason) = staged {
            self.fail_unit(pilot, unit, "STAGING_FAILED", &reason)?;
            return Err(PilotError::StagingFailed {
                unit: unit.to_string(),
                reason,
            });
        }
        let launched = {
            let spec = LaunchSpec {
                task: &u.task,
                sandbox: &u.sandbox,
                slots: &slots,
                base_env: &base_env,
                now_ns: now,
            };
            launcher.launch(&spec)
        };
        match launched {
            Ok(execution) => {
                u.execution = Some(execution);
                u.phase = Phase::Executing;
                self.registry.advance(unit, EXECUTING)?;
                self.registry.record_event(unit, "spawned")?;
                Ok(())
            }
            Err(reason) => {
                self.fail_unit(pilot, unit, "SPAWN_FAILED", &reason)?;
                Err(PilotError::SpawnFailed {
                    unit: unit.to_string(),
                    reason,
                })
            }
        }
    }

    fn release(&mut self, pilot: &str, unit: &str) -> Result<(), PilotError> {
        let p = self.pilot_mut(pilot)?;
        p.scheduler.release(&unit.to_string());
        p.scheduler.dequeue(&unit.to_string());
        if let Some(u) = p.units.get_mut(unit) {
            u.phase = Phase::Finished;
            u.execution = None;
        }
        Ok(())
    }

    fn fail_unit(&mut self, pilot: &str, unit: &str, code: &str, message: &str) -> Result<(), PilotError> {
        self.registry.record_error(unit, code, message)?;
        self.release(pilot, unit)?;
        self.registry.advance(unit, FAILED)?;
        Ok(())
    }

    /// Stop a unit wherever it is and mark it CANCELED.
    fn abort_unit(&mut self, pilot: &str, unit: &str, code: &str, message: &str) -> Result<(), PilotError> {
        let p = self.pilot_mut(pilot)?;
        if let Some(u) = p.units.get_mut(unit) {
            if let Some(execution) = u.execution.as_mut() {
                execution.terminate();
            }
        }
        self.registry.record_error(unit, code, message)?;
        self.release(pilot, unit)?;
        self.registry.advance(unit, CANCELED)?;
        Ok(())
    }

    fn dispatch(&mut self, pilot: &str) -> Result<(), PilotError> {
        for (unit, _) in self.schedule_tick(pilot)? {
            match self.execute_unit(pilot, &unit) {
                Ok(()) | Err(PilotError::SpawnFailed { .. } | PilotError::StagingFailed { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn activate(&mut self, pilot: &str) -> Result<(), PilotError> {
        let (cores, gpus, walltime) = {
            let p = &self.pilots[pilot];
            (p.description.cores, p.description.gpus, p.description.walltime_s)
        };
        let ts = self.set_pilot_state(pilot, ACTIVE)?;
        self.registry
            .record_event(pilot, &Annotation::Capacity { cpu: cores, gpu: gpus }.to_string())?;
        let p = self.pilot_mut(pilot)?;
        p.activated_ns = Some(ts);
        p.expires_ns = Some(ts + secs_to_ns_ceil(walltime));
        Ok(())
    }

    fn open_units(&self, pilot: &str) -> Vec<String> {
        let mut units: Vec<&ComputeUnit> = self.pilots[pilot].units.values().filter(|u| !u.is_finished()).collect();
        units.sort_by_key(|u| u.seq);
        units.into_iter().map(|u| u.uid.clone()).collect()
    }

    /// Mirror the pilot's job into the pilot state.
    fn sync_pilot(&mut self, pilot: &str) -> Result<(), PilotError> {
        let Some(job_uid) = self.pilots[pilot].job_uid.clone() else {
            return Ok(());
        };
        let job = self.access.job(&job_uid)?;
        let state = self.pilots[pilot].state.clone();
        if is_final(&state) {
            return Ok(());
        }
        if state == SUBMITTED && job.state == RUNNING {
            self.activate(pilot)?;
        }
        if is_final(&job.state) {
            let walltime_ns = secs_to_ns_ceil(self.pilots[pilot].description.walltime_s);
            let timed_out = matches!((job.start_ns, job.end_ns), (Some(s), Some(e)) if e >= s + walltime_ns);
            let (code, reason) = if timed_out {
                ("TIMEOUT", "pilot walltime expired".to_string())
            } else {
                ("PILOT_ENDED", format!("pilot job ended {}", job.state))
            };
            for unit in self.open_units(pilot) {
                self.abort_unit(pilot, &unit, code, &reason)?;
            }
            self.set_pilot_state(pilot, &job.state)?;
        }
        Ok(())
    }

    fn reap(&mut self, pilot: &str, now: u64) -> Result<Vec<String>, PilotError> {
        let run_dir = self.config.run_dir.clone();
        let mut exited = Vec::new();
        for u in self.pilot_mut(pilot)?.units.values_mut() {
            if let Some(code) = u.execution.as_mut().and_then(|e| e.poll(now)) {
                u.exit_code = Some(code);
                exited.push((u.seq, u.uid.clone(), code));
            }
        }
        exited.sort();
        let mut finished = Vec::with_capacity(exited.len());
        for (_, unit, code) in exited {
            self.registry.record_event(&unit, "exited")?;
            let (outputs, sandbox) = {
                let u = &self.pilots[pilot].units[&unit];
                (u.task.output_staging.clone(), u.sandbox.clone())
            };
            let staged = stage_out(&outputs, &sandbox, &run_dir);
            if code != 0 {
                self.fail_unit(pilot, &unit, "EXIT_NONZERO", &format!("exit code {code}"))?;
            } else if let Err(reason) = staged {
                self.fail_unit(pilot, &unit, "STAGING_FAILED", &reason)?;
            } else {
                self.release(pilot, &unit)?;
                self.registry.advance(&unit, DONE)?;
            }
            finished.push(unit);
        }
        Ok(finished)
    }

    fn expire(&mut self, pilot: &str) -> Result<Vec<String>, PilotError> {
        let units = self.open_units(pilot);
        for unit in &units {
            self.abort_unit(pilot, unit, "TIMEOUT", "pilot walltime expired")?;
        }
        if let Some(job) = self.pilots[pilot].job_uid.clone() {
            match self.access.cancel_job(&job) {
                Ok(_) | Err(AccessError::AlreadyFinal(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.set_pilot_state(pilot, DONE)?;
        Ok(units)
    }

    /// One pass of the owner loop: poll jobs, activate or retire pilots,
    /// collect finished units, enforce walltimes and start queued units.
    /// Returns the units that reached a final state.
    pub fn progress(&mut self) -> Result<Vec<String>, PilotError> {
        self.access.progress()?;
        let mut finished = Vec::new();
        let uids: Vec<String> = self.pilots.keys().cloned().collect();
        for pilot in uids {
            if is_final(&self.pilots[&pilot].state) {
                continue;
            }
            let open_before = self.open_units(&pilot);
            self.sync_pilot(&pilot)?;
            if is_final(&self.pilots[&pilot].state) {
                finished.extend(open_before);
                continue;
            }
            let now = self.registry.now_ns();
            finished.extend(self.reap(&pilot, now)?);
            let expired = self.pilots[&pilot].expires_ns.is_some_and(|e| now >= e);
            if expired {
                finished.extend(self.expire(&pilot)?);
                continue;
            }
            let before = self.open_units(&pilot);
            self.dispatch(&pilot)?;
            let after = self.open_units(&pilot);
            finished.extend(before.into_iter().filter(|u| !after.contains(u)));
        }
        Ok(finished)
    }

    pub fn cancel_unit(&mut self, unit: &str) -> Result<(), PilotError> {
        let pilot = self
            .unit_pilot
            .get(unit)
            .cloned()
            .ok_or_else(|| PilotError::UnknownUnit(unit.to_string()))?;
        if self.pilots[&pilot].units[unit].is_finished() {
            return Err(PilotError::AlreadyFinal(unit.to_string()));
        }
        self.abort_unit(&pilot, unit, "CANCELED", "unit canceled on request")
    }

    /// Cancel the pilot's open units, then release its job.
    pub fn cancel_pilot(&mut self, pilot: &str) -> Result<(), PilotError> {
        let state = self.pilots.get(pilot).ok_or_else(|| PilotError::UnknownPilot(pilot.to_string()))?.state.clone();
        if is_final(&state) {
            return Err(PilotError::AlreadyFinal(pilot.to_string()));
        }
        for unit in self.open_units(pilot) {
            self.abort_unit(pilot, &unit, "CANCELED", "pilot canceled")?;
        }
        if let Some(job) = self.pilots[pilot].job_uid.clone() {
            match self.access.cancel_job(&job) {
                Ok(_) | Err(AccessError::AlreadyFinal(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.set_pilot_state(pilot, CANCELED)?;
        Ok(())
    }

    /// The earliest instant at which [`progress`](Self::progress) has
    /// something to do, when known. Real processes have no deadline; callers
    /// poll for them.
    pub fn next_deadline(&self) -> Option<u64> {
        let units = self
            .pilots
            .values()
            .flat_map(|p| p.units.values())
            .filter_map(|u| u.execution.as_ref().and_then(|e| e.deadline()));
        let expiries = self
            .pilots
            .values()
            .filter(|p| p.is_active())
            .filter_map(|p| p.expires_ns);
        units.chain(expiries).chain(self.access.next_deadline()).min()
    }
}
