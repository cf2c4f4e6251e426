//! Cross-entity checks replayed from a trace alone.
//!
//! Relations between entities come from the annotation events: stage
//! membership, the pilot a task was bound to, the slots a unit held and the
//! pilot's capacity and walltime.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::clock::secs_to_ns_ceil;
use crate::state::names::*;
use crate::state::{builtin_models, Annotation, History, SlotIds, Trace};

pub const STAGE_BARRIER: &str = "stage-barrier";
pub const NO_OVERSUBSCRIPTION: &str = "no-oversubscription";
pub const LATE_BINDING: &str = "late-binding";
pub const WALLTIME: &str = "walltime";
pub const ALL_CHECKS: [&str; 4] = [STAGE_BARRIER, NO_OVERSUBSCRIPTION, LATE_BINDING, WALLTIME];

/// Slack allowed past a pilot's walltime before a unit still running counts
/// as a violation. Real processes get the cancel grace period on top.
pub const VIRTUAL_WALLTIME_SLACK_NS: u64 = 0;
pub const REAL_WALLTIME_SLACK_NS: u64 = 3_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown check `{0}` (known: stage-barrier, no-oversubscription, late-binding, walltime)")]
pub struct UnknownCheck(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckViolation {
    pub check: String,
    pub uid: String,
    pub detail: String,
}

impl CheckViolation {
    fn new(check: &str, uid: &str, detail: String) -> Self {
        Self {
            check: check.to_string(),
            uid: uid.to_string(),
            detail,
        }
    }
}

pub fn parse_checks<S: AsRef<str>>(names: &[S]) -> Result<Vec<&'static str>, UnknownCheck> {
    names
        .iter()
        .map(|n| {
            ALL_CHECKS
                .iter()
                .copied()
                .find(|c| *c == n.as_ref())
                .ok_or_else(|| UnknownCheck(n.as_ref().to_string()))
        })
        .collect()
}

/// The per-entity state model validation followed by the named checks.
pub fn check_trace<S: AsRef<str>>(trace: &Trace, checks: &[S]) -> Result<Vec<CheckViolation>, UnknownCheck> {
    let checks = parse_checks(checks)?;
    let mut out: Vec<CheckViolation> = trace
        .validate(&builtin_models())
        .into_iter()
        .map(|(uid, v)| CheckViolation::new("state-model", &uid, format!("{}: {v:?}", v.name())))
        .collect();
    for check in checks {
        out.extend(match check {
            STAGE_BARRIER => stage_barrier(trace),
            NO_OVERSUBSCRIPTION => no_oversubscription(trace),
            LATE_BINDING => late_binding(trace),
            _ => walltime(trace),
        });
    }
    Ok(out)
}

fn annotations(h: &History) -> impl Iterator<Item = (u64, Annotation)> + '_ {
    h.events.iter().filter_map(|e| Annotation::parse(&e.name).map(|a| (e.ts_ns, a)))
}

fn member_of(h: &History) -> Option<(String, usize)> {
    annotations(h).find_map(|(_, a)| match a {
        Annotation::Member { pipeline, stage } => Some((pipeline, stage)),
        _ => None,
    })
}

fn bound_pilot(h: &History) -> Option<(u64, String)> {
    annotations(h).find_map(|(ts, a)| match a {
        Annotation::Bind { pilot } => Some((ts, pilot)),
        _ => None,
    })
}

fn final_ns(h: &History) -> Option<u64> {
    h.states.last().filter(|r| is_final(&r.state)).map(|r| r.ts_ns)
}

/// Earliest moment the task left NEW for a non-final state.
fn started_ns(h: &History) -> Option<u64> {
    h.states.iter().skip(1).find(|r| !is_final(&r.state)).map(|r| r.ts_ns)
}

/// No task of stage s+1 leaves NEW before every task of stage s is final.
pub fn stage_barrier(trace: &Trace) -> Vec<CheckViolation> {
    let mut stages: BTreeMap<(String, usize), Vec<&History>> = BTreeMap::new();
    for h in trace.of_kind(TASK) {
        if let Some(key) = member_of(h) {
            stages.entry(key).or_default().push(h);
        }
    }
    let mut out = Vec::new();
    for ((pipeline, stage), tasks) in &stages {
        let Some(earlier) = stage.checked_sub(1).and_then(|s| stages.get(&(pipeline.clone(), s))) else {
            continue;
        };
        let barrier = earlier.iter().map(|h| final_ns(h)).collect::<Option<Vec<_>>>().map(|v| v.into_iter().max());
        for h in tasks {
            let Some(start) = started_ns(h) else { continue };
            match barrier {
                None => out.push(CheckViolation::new(
                    STAGE_BARRIER,
                    &h.uid,
                    format!("started at {start} while stage {} of {pipeline} was unfinished", stage - 1),
                )),
                Some(Some(end)) if start < end => out.push(CheckViolation::new(
                    STAGE_BARRIER,
                    &h.uid,
                    format!("started at {start} before stage {} of {pipeline} ended at {end}", stage - 1),
                )),
                _ => {}
            }
        }
    }
    out
}

struct Holding {
    uid: String,
    from: u64,
    until: u64,
    slots: SlotIds,
}

/// At every instant the slots held on a pilot fit its capacity and no slot
/// has two holders. A unit holds its slots from assignment to its final state.
pub fn no_oversubscription(trace: &Trace) -> Vec<CheckViolation> {
    let mut holdings: BTreeMap<String, Vec<Holding>> = BTreeMap::new();
    for h in trace.of_kind(TASK) {
        let Some((_, pilot)) = bound_pilot(h) else { continue };
        for (ts, a) in annotations(h) {
            if let Annotation::Slots(slots) = a {
                holdings.entry(pilot.clone()).or_default().push(Holding {
                    uid: h.uid.clone(),
                    from: ts,
                    until: final_ns(h).unwrap_or(u64::MAX),
                    slots,
                });
            }
        }
    }
    let mut out = Vec::new();
    for (pilot, mut held) in holdings {
        let capacity = trace.get(&pilot).and_then(|p| {
            annotations(p).find_map(|(_, a)| match a {
                Annotation::Capacity { cpu, gpu } => Some((cpu as usize, gpu as usize)),
                _ => None,
            })
        });
        let Some((cpu_cap, gpu_cap)) = capacity else {
            out.push(CheckViolation::new(NO_OVERSUBSCRIPTION, &pilot, "units hold slots on a pilot without capacity".into()));
            continue;
        };
        held.sort_by_key(|h| h.from);
        for (i, unit) in held.iter().enumerate() {
            if let Some(id) = unit.slots.cpu.iter().find(|&&c| c >= cpu_cap) {
                out.push(CheckViolation::new(NO_OVERSUBSCRIPTION, &unit.uid, format!("cpu slot {id} beyond {cpu_cap} on {pilot}")));
            }
            if let Some(id) = unit.slots.gpu.iter().find(|&&g| g >= gpu_cap) {
                out.push(CheckViolation::new(NO_OVERSUBSCRIPTION, &unit.uid, format!("gpu slot {id} beyond {gpu_cap} on {pilot}")));
            }
            // Everything held at the moment this unit acquired.
            let live: Vec<&Holding> = held[..=i].iter().filter(|o| o.until > unit.from).collect();
            let cpus: usize = live.iter().map(|o| o.slots.cpu.len()).sum();
            let gpus: usize = live.iter().map(|o| o.slots.gpu.len()).sum();
            if cpus > cpu_cap || gpus > gpu_cap {
                out.push(CheckViolation::new(
                    NO_OVERSUBSCRIPTION,
                    &unit.uid,
                    format!("{cpus} cpus / {gpus} gpus held on {pilot} with capacity {cpu_cap}/{gpu_cap}"),
                ));
            }
            for other in &live[..live.len() - 1] {
                let shared = other.slots.cpu.iter().any(|c| unit.slots.cpu.contains(c))
                    || other.slots.gpu.iter().any(|g| unit.slots.gpu.contains(g));
                if shared {
                    out.push(CheckViolation::new(
                        NO_OVERSUBSCRIPTION,
                        &unit.uid,
                        format!("shares a slot on {pilot} with {}", other.uid),
                    ));
                }
            }
        }
    }
    out
}

/// A task is bound only after its pilot became ACTIVE.
pub fn late_binding(trace: &Trace) -> Vec<CheckViolation> {
    let mut out = Vec::new();
    for h in trace.of_kind(TASK) {
        let Some(bound) = h.states.iter().find(|r| r.state == BOUND) else { continue };
        let Some((_, pilot)) = bound_pilot(h) else {
            out.push(CheckViolation::new(LATE_BINDING, &h.uid, "BOUND without a pilot".into()));
            continue;
        };
        match trace.get(&pilot).and_then(|p| p.entered(ACTIVE)) {
            None => out.push(CheckViolation::new(LATE_BINDING, &h.uid, format!("bound to {pilot}, which never became ACTIVE"))),
            Some(active) if bound.ts_ns < active => out.push(CheckViolation::new(
                LATE_BINDING,
                &h.uid,
                format!("bound at {} before {pilot} was ACTIVE at {active}", bound.ts_ns),
            )),
            _ => {}
        }
    }
    out
}

/// No unit outlives its pilot's walltime.
pub fn walltime(trace: &Trace) -> Vec<CheckViolation> {
    let slack = if trace.virtual_time {
        VIRTUAL_WALLTIME_SLACK_NS
    } else {
        REAL_WALLTIME_SLACK_NS
    };
    let mut out = Vec::new();
    for h in trace.of_kind(TASK) {
        let Some((_, pilot)) = bound_pilot(h) else { continue };
        let Some(p) = trace.get(&pilot) else { continue };
        let walltime = annotations(p).find_map(|(_, a)| match a {
            Annotation::Walltime { secs } => Some(secs),
            _ => None,
        });
        let (Some(active), Some(secs)) = (p.entered(ACTIVE), walltime) else { continue };
        let limit = active + secs_to_ns_ceil(secs) + slack;
        let end = final_ns(h).or_else(|| final_ns(p));
        if h.entered(EXECUTING).is_some() && end.is_none_or(|e| e > limit) {
            out.push(CheckViolation::new(WALLTIME, &h.uid, format!("still running past {pilot}'s walltime end at {limit}")));
        }
    }
    out
}
