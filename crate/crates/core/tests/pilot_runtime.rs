use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use strata::access::{LocalBackend, ResourceAccess, SimBatchBackend};
use strata::checks::{check_trace, ALL_CHECKS};
use strata::clock::{Clock, SystemClock, VirtualClock};
use strata::pilot::{base_environment, PilotConfig, PilotDescription, PilotRuntime};
use strata::sim::{QueueTimeModel, SimCluster};
use strata::state::names::*;
use strata::state::{builtin_models, validate_trace, Registry, Trace};
use strata::workflow::{Parallelism, TaskDescription};

struct Rig {
    registry: Arc<Registry>,
    runtime: PilotRuntime,
}

fn rig(clock: Arc<dyn Clock>, run_dir: &Path) -> Rig {
    let registry = Arc::new(Registry::new(clock.clone()));
    let mut access = ResourceAccess::new(registry.clone());
    access.attach(Box::new(LocalBackend::new("local", 4, 0, clock.mode()))).unwrap();
    let cluster = SimCluster::new("sim", 1, 4, 0, QueueTimeModel::constant(10.0));
    access.attach(Box::new(SimBatchBackend::new(cluster))).unwrap();
    let config = PilotConfig::for_mode(clock.mode(), run_dir.to_path_buf());
    Rig { registry, runtime: PilotRuntime::new(Arc::new(access), config) }
}

fn pilot_on(rig: &mut Rig, resource: &str) -> String {
    rig.runtime
        .submit_pilot(PilotDescription {
            resource_id: resource.into(),
            cores: 4,
            gpus: 0,
            walltime_s: 300.0,
            queue: "default".into(),
        })
        .unwrap()
}

/// Register, bind once the pilot is ACTIVE, submit and drive to final.
fn run_units(rig: &mut Rig, pilot: &str, tasks: Vec<TaskDescription>) -> BTreeMap<String, String> {
    let uids: Vec<String> = tasks.iter().map(|t| t.uid.clone()).collect();
    for t in &tasks {
        rig.registry.register_entity(&t.uid, TASK).unwrap();
    }
    let mut pending = Some(tasks);
    for _ in 0..100_000 {
        rig.runtime.progress().unwrap();
        if pending.is_some() && rig.runtime.pilot(pilot).unwrap().state() == ACTIVE {
            let tasks = pending.take().unwrap();
            for t in &tasks {
                rig.registry.advance(&t.uid, BOUND).unwrap();
                rig.registry.record_event(&t.uid, &format!("bind:{pilot}")).unwrap();
            }
            rig.runtime.submit_units(pilot, tasks).unwrap();
            continue;
        }
        if pending.is_none() && uids.iter().all(|u| rig.registry.is_final(u).unwrap()) {
            return uids.iter().map(|u| (u.clone(), rig.registry.current_state(u).unwrap())).collect();
        }
        rig.registry.clock().wait(rig.runtime.next_deadline()).unwrap();
    }
    panic!("units did not settle");
}

fn assert_trace_clean(registry: &Registry) {
    let trace = Trace::from_registry(registry);
    let violations = check_trace(&trace, &ALL_CHECKS).unwrap();
    assert!(violations.is_empty(), "{violations:#?}");
}

#[test]
fn exit_codes_are_the_real_process_status() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(Arc::new(SystemClock::new()), dir.path());
    let pilot = pilot_on(&mut rig, "local");
    let tasks = [0, 1, 7]
        .iter()
        .map(|code| TaskDescription::new(&format!("exit{code}"), "/bin/sh").args(["-c".to_string(), format!("exit {code}")]).duration(5.0))
        .collect();
    let states = run_units(&mut rig, &pilot, tasks);
    for code in [0, 1, 7] {
        let uid = format!("exit{code}");
        assert_eq!(rig.runtime.unit(&uid).unwrap().exit_code, Some(code));
        assert_eq!(states[&uid], if code == 0 { DONE } else { FAILED });
    }
    rig.runtime.cancel_pilot(&pilot).unwrap();
    assert_trace_clean(&rig.registry);
}

#[test]
fn units_see_only_base_plus_their_own_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut rig = rig(Arc::new(SystemClock::new()), dir.path());
    let pilot = pilot_on(&mut rig, "local");
    let tasks = vec![
        TaskDescription::new("envA", "/usr/bin/env").env("ONLY_A", "1").duration(5.0),
        TaskDescription::new("envB", "/usr/bin/env").env("ONLY_B", "two words").env("HOME", "/elsewhere").duration(5.0),
    ];
    let wanted: Vec<BTreeMap<String, String>> = tasks
        .iter()
        .map(|t| {
            let mut env = base_environment();
            env.extend(t.environment.clone());
            env
        })
        .collect();
    let states = run_units(&mut rig, &pilot, tasks);
    assert!(states.values().all(|s| s == DONE), "{states:?}");
    let mut sandboxes = Vec::new();
    for (uid, want) in ["envA", "envB"].iter().zip(wanted) {
        let unit = rig.runtime.unit(uid).unwrap();
        assert_eq!(unit.sandbox, dir.path().join(&pilot).join(uid));
        let dump = std::fs::read_to_string(unit.sandbox.join("stdout")).unwrap();
        let got: BTreeMap<String, String> = dump
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        assert_eq!(got, want, "{uid}");
        sandboxes.push(unit.sandbox.clone());
    }
    assert!(!sandboxes[0].starts_with(&sandboxes[1]) && !sandboxes[1].starts_with(&sandboxes[0]));
    rig.runtime.cancel_pilot(&pilot).unwrap();
}

/// The same units on the local and simbatch backends, under a virtual clock.
#[test]
fn backends_are_interchangeable() {
    let mut outcomes = Vec::new();
    for resource in ["local", "sim"] {
        let dir = tempfile::tempdir().unwrap();
        let mut rig = rig(Arc::new(VirtualClock::new()), dir.path());
        let pilot = pilot_on(&mut rig, resource);
        let tasks = (0..6)
            .map(|i| {
                TaskDescription::new(&format!("u{i}"), "/bin/true")
                    .cores(1 + i % 3, Parallelism::Mpi)
                    .duration(f64::from(5 + i))
            })
            .collect();
        let states = run_units(&mut rig, &pilot, tasks);
        rig.runtime.cancel_pilot(&pilot).unwrap();
        assert_trace_clean(&rig.registry);
        let models = builtin_models();
        for history in rig.registry.histories() {
            assert!(validate_trace(&history, &models[&history.kind]).is_empty(), "{}", history.uid);
        }
        let p = rig.registry.history(&pilot).unwrap();
        let first_exec = (0..6).filter_map(|i| rig.registry.history(&format!("u{i}")).unwrap().entered(EXECUTING)).min().unwrap();
        // Relative to activation the unit schedule is the same on both.
        let offsets: Vec<u64> = (0..6)
            .map(|i| rig.registry.history(&format!("u{i}")).unwrap().final_record().unwrap().ts_ns - p.entered(ACTIVE).unwrap())
            .collect();
        outcomes.push((states, offsets, first_exec >= p.entered(ACTIVE).unwrap()));
    }
    assert_eq!(outcomes[0].0, outcomes[1].0);
    assert!(outcomes.iter().all(|o| o.2));
    for (a, b) in outcomes[0].1.iter().zip(&outcomes[1].1) {
        // Registry stamps are nudged forward by at most a few ns per record.
        assert!(a.abs_diff(*b) < 1_000, "{:?}", outcomes);
    }
}
