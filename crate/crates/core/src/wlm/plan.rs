use std::collections::BTreeMap;

use serde::Serialize;

use super::catalog::{Catalog, ResourceCatalogEntry};
use super::WlmError;
use crate::pilot::{PilotDescription, PilotRuntime};
use crate::state::names::{is_final, ACTIVE, BOUND, NEW};
use crate::state::{Annotation, Registry};
use crate::workflow::TaskDescription;

/// Pilot walltime is the expected busy time times this factor.
pub const WALLTIME_SAFETY_FACTOR: f64 = 1.5;

/// Concurrent tasks per pilot unless configured otherwise.
pub const DEFAULT_CONCURRENCY_CAP: u32 = 32;

/// Mutually independent tasks that may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub uid: String,
    pub tasks: Vec<TaskDescription>,
}

impl Workload {
    pub fn new(uid: &str, tasks: Vec<TaskDescription>) -> Self {
        Self { uid: uid.into(), tasks }
    }
}

/// Resource id to the uids of the tasks placed there, in workload order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub assignments: BTreeMap<String, Vec<String>>,
}

/// Task uid to the pilot it was bound to and when.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Binding {
    pub entries: BTreeMap<String, (String, u64)>,
}

pub fn fits(task: &TaskDescription, entry: &ResourceCatalogEntry) -> bool {
    task.cpu_count <= entry.total_cores() && task.gpu_count <= entry.total_gpus()
}

/// Walltime needed to get through `work` core-seconds on `cores` when no
/// task is shorter than `longest_s`.
pub fn required_walltime_s(work: f64, cores: u32, longest_s: f64) -> f64 {
    let busy = (work / f64::from(cores.max(1))).max(longest_s);
    busy.ceil() * WALLTIME_SAFETY_FACTOR
}

/// Size a pilot for `tasks` on `entry`.
///
/// cores = min(resource cores, largest task × min(task count, cap)), GPUs
/// likewise. The walltime covers the total work spread over those cores, but
/// never less than the longest task, times the safety factor and clamped to
/// the resource maximum.
pub fn derive_pilot_description(
    tasks: &[TaskDescription],
    entry: &ResourceCatalogEntry,
    concurrency_cap: u32,
) -> Result<PilotDescription, WlmError> {
    if tasks.is_empty() {
        return Err(WlmError::EmptyWorkload);
    }
    if let Some(t) = tasks.iter().find(|t| !fits(t, entry)) {
        return Err(WlmError::InfeasibleOnResource {
            task: t.uid.clone(),
            resource: entry.resource_id.clone(),
        });
    }
    let width = (tasks.len() as u64).min(u64::from(concurrency_cap.max(1)));
    let max_cpu = tasks.iter().map(|t| t.cpu_count).max().unwrap_or(1);
    let max_gpu = tasks.iter().map(|t| t.gpu_count).max().unwrap_or(0);
    let cores = (u64::from(max_cpu) * width).min(u64::from(entry.total_cores())) as u32;
    let gpus = (u64::from(max_gpu) * width).min(u64::from(entry.total_gpus())) as u32;
    let work: f64 = tasks.iter().map(TaskDescription::work).sum();
    let longest = tasks.iter().map(|t| t.expected_duration_s).fold(0.0, f64::max);
    let walltime_s = required_walltime_s(work, cores, longest).min(entry.max_walltime_s);
    Ok(PilotDescription {
        resource_id: entry.resource_id.clone(),
        cores,
        gpus,
        walltime_s,
        queue: entry.queue.clone(),
    })
}

/// Feasible resources ranked by the estimated queue wait of the pilot each
/// would receive, shortest first; ties go to the smaller resource id.
pub fn select_resources<F>(
    tasks: &[TaskDescription],
    catalog: &Catalog,
    concurrency_cap: u32,
    mut estimate: F,
) -> Result<Vec<(String, f64)>, WlmError>
where
    F: FnMut(&ResourceCatalogEntry, &PilotDescription) -> Result<f64, WlmError>,
{
    if tasks.is_empty() {
        return Err(WlmError::EmptyWorkload);
    }
    let mut ranked = Vec::new();
    for entry in &catalog.resources {
        if !tasks.iter().all(|t| fits(t, entry)) {
            continue;
        }
        let pilot = derive_pilot_description(tasks, entry, concurrency_cap)?;
        ranked.push((entry.resource_id.clone(), estimate(entry, &pilot)?));
    }
    if ranked.is_empty() {
        return Err(WlmError::NoFeasibleResource);
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Split `tasks` over ranked resources in proportion to their free cores.
///
/// Each resource gets a core quota proportional to its free capacity; tasks
/// are taken in order and each goes to the feasible resource with the most
/// quota left, the earlier-ranked one on ties. When nothing is free the
/// totals are used instead.
pub fn partition(tasks: &[TaskDescription], resources: &[(&ResourceCatalogEntry, u32)]) -> Result<PartitionPlan, WlmError> {
    if resources.is_empty() {
        return Err(WlmError::NoFeasibleResource);
    }
    let mut free: Vec<f64> = resources.iter().map(|(_, f)| f64::from(*f)).collect();
    if free.iter().all(|f| *f == 0.0) {
        free = resources.iter().map(|(e, _)| f64::from(e.total_cores())).collect();
    }
    let total_free: f64 = free.iter().sum();
    let demand: f64 = tasks.iter().map(|t| f64::from(t.cpu_count)).sum();
    let mut left: Vec<f64> = free.iter().map(|f| f / total_free * demand).collect();

    let mut plan = PartitionPlan::default();
    for task in tasks {
        let mut best: Option<usize> = None;
        for (i, (entry, _)) in resources.iter().enumerate() {
            if fits(task, entry) && best.is_none_or(|b| left[i] > left[b]) {
                best = Some(i);
            }
        }
        let i = best.ok_or_else(|| WlmError::UnplaceableTask(task.uid.clone()))?;
        left[i] -= f64::from(task.cpu_count);
        plan.assignments
            .entry(resources[i].0.resource_id.clone())
            .or_default()
            .push(task.uid.clone());
    }
    Ok(plan)
}

/// Late binding: tasks assigned to a pilot move NEW to BOUND only once that
/// pilot is ACTIVE. Tasks of pilots still waiting are left alone.
///
/// `assignments` maps pilot uid to task uids. A final pilot with tasks still
/// waiting for it is an error, and nothing is bound in that case.
pub fn bind(
    assignments: &BTreeMap<String, Vec<String>>,
    pilots: &PilotRuntime,
    registry: &Registry,
) -> Result<Binding, WlmError> {
    for (pilot, tasks) in assignments {
        let state = pilots.pilot(pilot).map(|p| p.state().to_string()).unwrap_or_default();
        if is_final(&state) {
            let waiting: Vec<String> = tasks
                .iter()
                .filter(|t| registry.current_state(t).is_ok_and(|s| s == NEW))
                .cloned()
                .collect();
            if !waiting.is_empty() {
                return Err(WlmError::PilotFailed {
                    pilot: pilot.clone(),
                    state,
                    tasks: waiting,
                });
            }
        }
    }
    let mut binding = Binding::default();
    for (pilot, tasks) in assignments {
        if pilots.pilot(pilot).map(|p| p.state()) != Some(ACTIVE) {
            continue;
        }
        for task in tasks {
            if registry.current_state(task)? != NEW {
                continue;
            }
            let record = registry.advance(task, BOUND)?;
            registry.record_event(task, &Annotation::Bind { pilot: pilot.clone() }.to_string())?;
            binding.entries.insert(task.clone(), (pilot.clone(), record.ts_ns));
        }
    }
    Ok(binding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::BackendKind;
    use crate::workflow::Parallelism;

    fn entry(id: &str, cores: u32, gpus: u32) -> ResourceCatalogEntry {
        let mut e = ResourceCatalogEntry::new(id, 1, cores, BackendKind::Simbatch);
        e.gpus_per_node = gpus;
        e
    }

    fn ones(n: usize) -> Vec<TaskDescription> {
        (0..n).map(|i| TaskDescription::new(&format!("t{i}"), "true")).collect()
    }

    #[test]
    fn ranking_by_estimate_then_id() {
        let catalog = Catalog::new(vec![entry("A", 64, 0), entry("B", 64, 0)]).unwrap();
        let est = |a: f64, b: f64| move |e: &ResourceCatalogEntry, _: &PilotDescription| Ok(if e.resource_id == "A" { a } else { b });
        let ids = |r: Vec<(String, f64)>| r.into_iter().map(|(id, _)| id).collect::<Vec<_>>();
        assert_eq!(ids(select_resources(&ones(2), &catalog, 32, est(100.0, 10.0)).unwrap()), ["B", "A"]);
        assert_eq!(ids(select_resources(&ones(2), &catalog, 32, est(50.0, 50.0)).unwrap()), ["A", "B"]);
    }

    #[test]
    fn ranking_keeps_only_feasible() {
        let catalog = Catalog::new(vec![entry("A", 64, 0), entry("B", 256, 0)]).unwrap();
        let tasks = vec![TaskDescription::new("big", "x").cores(128, Parallelism::Mpi)];
        let r = select_resources(&tasks, &catalog, 32, |_, _| Ok(0.0)).unwrap();
        assert_eq!(r, [("B".to_string(), 0.0)]);
        let tasks = vec![TaskDescription::new("huge", "x").cores(512, Parallelism::Mpi)];
        assert!(matches!(
            select_resources(&tasks, &catalog, 32, |_, _| Ok(0.0)),
            Err(WlmError::NoFeasibleResource)
        ));
    }

    #[test]
    fn partition_rules() {
        let a = entry("A", 8, 0);
        let b = entry("B", 8, 0);
        let plan = partition(&ones(4), &[(&a, 8)]).unwrap();
        assert_eq!(plan.assignments["A"].len(), 4);
        let plan = partition(&ones(4), &[(&a, 3), (&b, 1)]).unwrap();
        assert_eq!(plan.assignments["A"], ["t0", "t1", "t2"]);
        assert_eq!(plan.assignments["B"], ["t3"]);
        let gpu_task = vec![TaskDescription::new("g", "x").gpus(2)];
        assert!(matches!(partition(&gpu_task, &[(&a, 8), (&b, 8)]), Err(WlmError::UnplaceableTask(_))));
    }

    #[test]
    fn pilot_sizing() {
        let e = entry("R", 64, 0);
        let four: Vec<_> = ones(4).into_iter().map(|t| t.duration(60.0)).collect();
        let p = derive_pilot_description(&four, &e, 32).unwrap();
        assert_eq!((p.cores, p.walltime_s), (4, 90.0));
        let one = vec![TaskDescription::new("m", "x").cores(8, Parallelism::Mpi).duration(100.0)];
        let p = derive_pilot_description(&one, &e, 32).unwrap();
        assert_eq!((p.cores, p.walltime_s), (8, 150.0));
        let big = vec![TaskDescription::new("b", "x").cores(128, Parallelism::Mpi)];
        assert!(matches!(
            derive_pilot_description(&big, &e, 32),
            Err(WlmError::InfeasibleOnResource { .. })
        ));
    }

    #[test]
    fn longest_task_bounds_walltime() {
        let e = entry("R", 64, 0);
        let tasks = vec![
            TaskDescription::new("long", "x").duration(100.0),
            TaskDescription::new("s1", "x").duration(1.0),
            TaskDescription::new("s2", "x").duration(1.0),
        ];
        let p = derive_pilot_description(&tasks, &e, 32).unwrap();
        assert_eq!(p.walltime_s, 150.0);
        let mut short = e.clone();
        short.max_walltime_s = 30.0;
        assert_eq!(derive_pilot_description(&tasks, &short, 32).unwrap().walltime_s, 30.0);
    }
}
