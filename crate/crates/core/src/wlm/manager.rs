use std::collections::BTreeMap;
use std::sync::Arc;

use super::catalog::Catalog;
use super::plan::{bind, derive_pilot_description, partition, required_walltime_s, select_resources, Binding, DEFAULT_CONCURRENCY_CAP};
use super::WlmError;
use crate::pilot::{PilotConfig, PilotDescription, PilotError, PilotInfo, PilotRuntime};
use crate::sim::Scenario;
use crate::state::names::*;
use crate::state::Registry;
use crate::workflow::TaskDescription;

#[derive(Debug, Clone)]
pub struct WlmConfig {
    pub concurrency_cap: u32,
    /// How many of the top-ranked resources a workload is spread over.
    pub max_resources: usize,
}

impl Default for WlmConfig {
    fn default() -> Self {
        Self {
            concurrency_cap: DEFAULT_CONCURRENCY_CAP,
            max_resources: 1,
        }
    }
}

/// Where a workload went.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub workload: String,
    /// Pilot uid to the tasks assigned to it.
    pub pilots: BTreeMap<String, Vec<String>>,
    /// Pilots submitted for this workload, as opposed to reused ones.
    pub submitted: Vec<String>,
}

/// Turns ready task sets into pilots and bound units.
#[derive(Debug)]
pub struct WorkloadManager {
    catalog: Catalog,
    registry: Arc<Registry>,
    runtime: PilotRuntime,
    config: WlmConfig,
    /// Tasks assigned to a pilot and waiting for it to become ACTIVE.
    waiting: BTreeMap<String, Vec<String>>,
    descriptions: BTreeMap<String, TaskDescription>,
    workloads: BTreeMap<String, Vec<String>>,
    next_workload: u64,
}

impl WorkloadManager {
    pub fn new(catalog: Catalog, runtime: PilotRuntime, config: WlmConfig) -> Self {
        Self {
            catalog,
            registry: runtime.registry().clone(),
            runtime,
            config,
            waiting: BTreeMap::new(),
            descriptions: BTreeMap::new(),
            workloads: BTreeMap::new(),
            next_workload: 1,
        }
    }

    /// Backends for every catalog entry, a pilot runtime over them and a
    /// manager on top.
    pub fn from_catalog(
        catalog: Catalog,
        registry: Arc<Registry>,
        scenario: Option<&Scenario>,
        pilot_config: PilotConfig,
        config: WlmConfig,
    ) -> Result<Self, WlmError> {
        let access = Arc::new(catalog.build_access(registry, scenario)?);
        Ok(Self::new(catalog, PilotRuntime::new(access, pilot_config), config))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn runtime(&self) -> &PilotRuntime {
        &self.runtime
    }

    pub fn config(&self) -> &WlmConfig {
        &self.config
    }

    pub fn capacity(&self) -> Vec<PilotInfo> {
        self.runtime.infos()
    }

    pub fn workload_tasks(&self, workload: &str) -> Option<&[String]> {
        self.workloads.get(workload).map(Vec::as_slice)
    }

    /// Start a pilot that is not tied to any workload, as a standing pool.
    pub fn submit_to_pool(&mut self, description: PilotDescription) -> Result<String, WlmError> {
        if self.catalog.get(&description.resource_id).is_none() {
            return Err(WlmError::UnknownResource(description.resource_id));
        }
        Ok(self.runtime.submit_pilot(description)?)
    }

    /// Select, partition, find or submit pilots, and bind whatever can be
    /// bound right away. Unregistered tasks are registered; every task must
    /// be NEW.
    pub fn submit_workload(&mut self, tasks: Vec<TaskDescription>) -> Result<Placement, WlmError> {
        if tasks.is_empty() {
            return Err(WlmError::EmptyWorkload);
        }
        for task in &tasks {
            let problems = task.problems();
            if !problems.is_empty() {
                return Err(WlmError::InvalidTask {
                    task: task.uid.clone(),
                    problems,
                });
            }
            if let Ok(state) = self.registry.current_state(&task.uid) {
                if state != NEW {
                    return Err(WlmError::TaskNotNew {
                        task: task.uid.clone(),
                        state,
                    });
                }
            }
        }
        let access = self.runtime.access().clone();
        let ranked = select_resources(&tasks, &self.catalog, self.config.concurrency_cap, |entry, pilot| {
            Ok(access.queue_info(&entry.resource_id, pilot.cores)?.estimated_wait_s)
        })?;
        let chosen: Vec<_> = ranked
            .iter()
            .take(self.config.max_resources.max(1))
            .map(|(id, _)| {
                let entry = self.catalog.get(id).expect("ranked from the catalog");
                (entry, self.free_cores(id, entry.total_cores()))
            })
            .collect();
        let plan = partition(&tasks, &chosen)?;

        for task in &tasks {
            if !self.registry.contains(&task.uid) {
                self.registry.register_entity(&task.uid, TASK)?;
            }
            self.descriptions.insert(task.uid.clone(), task.clone());
        }
        let workload = format!("workload.{:04}", self.next_workload);
        self.next_workload += 1;
        self.workloads
            .insert(workload.clone(), tasks.iter().map(|t| t.uid.clone()).collect());

        let mut placement = Placement {
            workload,
            pilots: BTreeMap::new(),
            submitted: Vec::new(),
        };
        for (resource, uids) in plan.assignments {
            let subset: Vec<TaskDescription> = uids.iter().map(|u| self.descriptions[u].clone()).collect();
            let pilot = match self.reusable_pilot(&resource, &subset) {
                Some(p) => p,
                None => {
                    let entry = self.catalog.get(&resource).expect("planned from the catalog");
                    let description = derive_pilot_description(&subset, entry, self.config.concurrency_cap)?;
                    let p = self.runtime.submit_pilot(description)?;
                    placement.submitted.push(p.clone());
                    p
                }
            };
            self.waiting.entry(pilot.clone()).or_default().extend(uids.iter().cloned());
            placement.pilots.insert(pilot, uids);
        }
        self.bind_waiting()?;
        Ok(placement)
    }

    fn free_cores(&self, resource: &str, total: u32) -> u32 {
        let held: u32 = self
            .runtime
            .pilots()
            .filter(|p| p.description.resource_id == resource && !is_final(p.state()))
            .map(|p| p.description.cores)
            .sum();
        total.saturating_sub(held)
    }

    /// A live pilot on `resource` big enough for every task in `subset` and
    /// with walltime left for its current work plus the subset.
    fn reusable_pilot(&self, resource: &str, subset: &[TaskDescription]) -> Option<String> {
        let now = self.registry.now_ns();
        let max_cpu = subset.iter().map(|t| t.cpu_count).max().unwrap_or(1);
        let max_gpu = subset.iter().map(|t| t.gpu_count).max().unwrap_or(0);
        let longest = subset.iter().map(|t| t.expected_duration_s).fold(0.0, f64::max);
        let new_work: f64 = subset.iter().map(TaskDescription::work).sum();
        self.runtime
            .pilots()
            .filter(|p| p.description.resource_id == resource)
            .filter(|p| matches!(p.state(), SUBMITTED | ACTIVE))
            .filter(|p| p.description.cores >= max_cpu && p.description.gpus >= max_gpu)
            .find(|p| {
                let queued: f64 = self
                    .waiting
                    .get(&p.uid)
                    .into_iter()
                    .flatten()
                    .map(|t| self.descriptions[t].work())
                    .sum();
                let work = p.outstanding_work() + queued + new_work;
                required_walltime_s(work, p.description.cores, longest) <= p.remaining_walltime_s(now)
            })
            .map(|p| p.uid.clone())
    }

    /// Bind tasks whose pilot became ACTIVE and hand them over as units.
    /// Tasks stranded on a pilot that ended first are failed.
    fn bind_waiting(&mut self) -> Result<Binding, WlmError> {
        let mut all = Binding::default();
        let pilots: Vec<String> = self.waiting.keys().cloned().collect();
        for pilot in pilots {
            let group = BTreeMap::from([(pilot.clone(), self.waiting[&pilot].clone())]);
            match bind(&group, &self.runtime, &self.registry) {
                Ok(binding) => {
                    let bound: Vec<TaskDescription> = group[&pilot]
                        .iter()
                        .filter(|t| binding.entries.contains_key(*t))
                        .map(|t| self.descriptions[t].clone())
                        .collect();
                    if !bound.is_empty() {
                        self.runtime.submit_units(&pilot, bound)?;
                    }
                    all.entries.extend(binding.entries);
                }
                Err(WlmError::PilotFailed { pilot, state, tasks }) => {
                    for task in &tasks {
                        self.registry
                            .record_error(task, "PILOT_FAILED", &format!("pilot {pilot} ended {state} before binding"))?;
                        self.registry.advance(task, FAILED)?;
                    }
                }
                Err(e) => return Err(e),
            }
            let registry = &self.registry;
            let left = self.waiting.get_mut(&pilot).expect("listed above");
            left.retain(|t| registry.current_state(t).is_ok_and(|s| s == NEW));
            if left.is_empty() {
                self.waiting.remove(&pilot);
            }
        }
        Ok(all)
    }

    /// One pass of the owner loop. Returns tasks that reached a final state.
    pub fn progress(&mut self) -> Result<Vec<String>, WlmError> {
        let mut finished = self.runtime.progress()?;
        let before: Vec<String> = self.waiting.values().flatten().cloned().collect();
        self.bind_waiting()?;
        finished.extend(before.into_iter().filter(|t| self.registry.is_final(t).unwrap_or(false)));
        Ok(finished)
    }

    pub fn next_deadline(&self) -> Option<u64> {
        self.runtime.next_deadline()
    }

    /// Cancel a task wherever it is. Final tasks are left alone.
    pub fn cancel_task(&mut self, task: &str) -> Result<(), WlmError> {
        if self.registry.is_final(task)? {
            return Ok(());
        }
        if self.runtime.unit(task).is_some() {
            match self.runtime.cancel_unit(task) {
                Ok(()) | Err(PilotError::AlreadyFinal(_)) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
        for tasks in self.waiting.values_mut() {
            tasks.retain(|t| t != task);
        }
        self.waiting.retain(|_, t| !t.is_empty());
        self.registry.advance(task, CANCELED)?;
        Ok(())
    }

    /// Submit `tasks` and drive everything until each of them is final.
    pub fn execute_workload(&mut self, tasks: Vec<TaskDescription>) -> Result<BTreeMap<String, String>, WlmError> {
        let uids: Vec<String> = tasks.iter().map(|t| t.uid.clone()).collect();
        self.submit_workload(tasks)?;
        loop {
            self.progress()?;
            if uids.iter().all(|u| self.registry.is_final(u).unwrap_or(false)) {
                break;
            }
            self.registry.clock().wait(self.next_deadline())?;
        }
        Ok(uids
            .into_iter()
            .map(|u| {
                let s = self.registry.current_state(&u).unwrap_or_default();
                (u, s)
            })
            .collect())
    }

    /// Cancel every live pilot and anything still waiting for one.
    pub fn shutdown(&mut self) -> Result<(), WlmError> {
        let waiting: Vec<String> = self.waiting.values().flatten().cloned().collect();
        for task in waiting {
            self.cancel_task(&task)?;
        }
        let live: Vec<String> = self
            .runtime
            .pilots()
            .filter(|p| !is_final(p.state()))
            .map(|p| p.uid.clone())
            .collect();
        for pilot in live {
            match self.runtime.cancel_pilot(&pilot) {
                Ok(()) | Err(PilotError::AlreadyFinal(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}
