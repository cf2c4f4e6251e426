//! Drive the bridge service over HTTP against a local pool.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use strata::access::BackendKind;
use strata::bridge::{aggregate_capacity, serve, ServiceHandle, SharedManager};
use strata::clock::{Clock, SystemClock};
use strata::pilot::PilotConfig;
use strata::state::{builtin_models, Registry};
use strata::wlm::{Catalog, ResourceCatalogEntry, WlmConfig, WorkloadManager};

pub fn local_manager(dir: &Path, cores: u32) -> WorkloadManager {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let registry = Arc::new(Registry::new(clock.clone()));
    let mut entry = ResourceCatalogEntry::new("local", 1, cores, BackendKind::Local);
    entry.max_walltime_s = 600.0;
    let catalog = Catalog::new(vec![entry]).unwrap();
    let config = PilotConfig::for_mode(clock.mode(), dir.to_path_buf());
    WorkloadManager::from_catalog(catalog, registry, None, config, WlmConfig::default()).unwrap()
}

pub struct Service {
    pub wlm: SharedManager,
    pub handle: ServiceHandle,
    pub base: String,
}

pub fn start(dir: &Path, cores: u32) -> Service {
    let wlm: SharedManager = Arc::new(Mutex::new(local_manager(dir, cores)));
    let handle = serve(wlm.clone(), "127.0.0.1:0").unwrap();
    let base = format!("http://{}", handle.local_addr());
    Service { wlm, handle, base }
}

/// Status and parsed body, 4xx/5xx included.
pub fn call(method: &str, url: &str, body: Option<&Value>) -> (u16, Value) {
    let req = ureq::request(method, url).timeout(Duration::from_secs(10));
    let res = match body {
        Some(b) => req.send_string(&b.to_string()),
        None => req.call(),
    };
    let res = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{method} {url}: {e}"),
    };
    let status = res.status();
    let text = res.into_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

#[derive(Debug, Default)]
pub struct FlowReport {
    pub polls: usize,
    pub final_states: BTreeMap<String, String>,
    pub regressions: Vec<String>,
    pub capacity_mismatches: Vec<String>,
    pub elapsed: Duration,
}

fn order(state: &str) -> usize {
    builtin_models()["task"].order_index(state).unwrap_or(usize::MAX)
}

/// Free/total cpus straight from every ACTIVE pilot's slot map.
fn census(wlm: &WorkloadManager) -> (u32, u32) {
    wlm.runtime()
        .pilots()
        .filter(|p| p.is_active())
        .fold((0, 0), |(free, total), p| (free + p.slots().free_cpus(), total + p.slots().total_cpus()))
}

/// POST a two-task workload, poll it to completion and check GET /pilots
/// along the way.
pub fn two_task_flow(service: &Service) -> FlowReport {
    let started = Instant::now();
    let submission = json!({
        "uid": "w1",
        "callback": "poll",
        "tasks": [
            {"uid": "flow.a", "executable": "/bin/echo", "arguments": ["a"], "expected_duration_s": 5, "schema_version": 1},
            {"uid": "flow.b", "executable": "/bin/sleep", "arguments": ["0.3"], "expected_duration_s": 5, "schema_version": 1}
        ]
    });
    let (status, body) = call("POST", &format!("{}/workloads", service.base), Some(&submission));
    assert_eq!(status, 201, "{body}");
    assert_eq!(body["uid"], "w1");

    let mut report = FlowReport::default();
    let mut last: BTreeMap<String, String> = BTreeMap::new();
    loop {
        let (status, body) = call("GET", &format!("{}/workloads/w1", service.base), None);
        assert_eq!(status, 200);
        report.polls += 1;
        let states: BTreeMap<String, String> = body["tasks"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
            .collect();
        for (uid, state) in &states {
            if let Some(prev) = last.get(uid) {
                if order(state) < order(prev) {
                    report.regressions.push(format!("{uid}: {prev} -> {state}"));
                }
            }
        }
        last = states;

        let (status, pilots) = call("GET", &format!("{}/pilots", service.base), None);
        assert_eq!(status, 200);
        let (free, total) = (pilots["free_cores"].as_u64().unwrap(), pilots["total_cores"].as_u64().unwrap());
        if free > total {
            report.capacity_mismatches.push(format!("free {free} > total {total}"));
        }
        {
            let wlm = service.wlm.lock().unwrap();
            let summary = aggregate_capacity(&wlm.capacity());
            let (cfree, ctotal) = census(&wlm);
            if (summary.free_cores, summary.total_cores) != (cfree, ctotal) {
                report.capacity_mismatches.push(format!(
                    "summary {}/{} vs census {cfree}/{ctotal}",
                    summary.free_cores, summary.total_cores
                ));
            }
        }

        if last.values().all(|s| ["DONE", "FAILED", "CANCELED"].contains(&s.as_str())) || started.elapsed() > Duration::from_secs(30) {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    // Once idle the served figures must equal the census exactly.
    let (_, pilots) = call("GET", &format!("{}/pilots", service.base), None);
    let (cfree, ctotal) = census(&service.wlm.lock().unwrap());
    if (pilots["free_cores"].as_u64(), pilots["total_cores"].as_u64()) != (Some(cfree.into()), Some(ctotal.into())) {
        report.capacity_mismatches.push(format!("idle GET /pilots {pilots} vs census {cfree}/{ctotal}"));
    }
    report.final_states = last;
    report.elapsed = started.elapsed();
    report
}
