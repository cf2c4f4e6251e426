use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::capacity::aggregate_capacity;
use super::exchange::{canonical_json, decode_record};
use super::BridgeError;
use crate::state::names::TASK;
use crate::state::validate_uid;
use crate::wlm::WorkloadManager;
use crate::workflow::TaskDescription;

/// How often the driver thread steps the pool when nothing is due sooner.
const DRIVE_INTERVAL: Duration = Duration::from_millis(5);

pub type SharedManager = Arc<Mutex<WorkloadManager>>;

struct Shared {
    wlm: SharedManager,
    submissions: Mutex<Submissions>,
}

#[derive(Default)]
struct Submissions {
    tasks: BTreeMap<String, Vec<String>>,
    next: u64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn canonical<T: Serialize>(status: StatusCode, body: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], canonical_json(body)).into_response()
}

fn not_found(what: &str, uid: &str) -> Response {
    canonical(StatusCode::NOT_FOUND, &json!({ "error": format!("unknown {what} `{uid}`") }))
}

fn bad_request(rejects: Vec<String>) -> Response {
    canonical(StatusCode::BAD_REQUEST, &json!({ "rejects": rejects }))
}

async fn get_pilots(State(shared): State<Arc<Shared>>) -> Response {
    let summary = aggregate_capacity(&lock(&shared.wlm).capacity());
    canonical(StatusCode::OK, &summary)
}

/// Parse a WorkloadSubmission: `{"uid"?, "tasks": [record...], "callback"?: "poll"}`.
fn parse_submission(body: &[u8]) -> Result<(Option<String>, Vec<TaskDescription>), Vec<String>> {
    let value: Value = serde_json::from_slice(body).map_err(|e| vec![format!("body: {e}")])?;
    let Value::Object(mut object) = value else {
        return Err(vec!["body is not a JSON object".into()]);
    };
    let mut rejects = Vec::new();
    let uid = match object.remove("uid") {
        None | Some(Value::Null) => None,
        Some(Value::String(uid)) => {
            if let Err(e) = validate_uid(&uid) {
                rejects.push(format!("uid: {e}"));
            }
            Some(uid)
        }
        Some(_) => {
            rejects.push("uid must be a string".into());
            None
        }
    };
    match object.remove("callback") {
        None => {}
        Some(Value::String(mode)) if mode == "poll" => {}
        Some(other) => rejects.push(format!("callback mode {other} is not supported, only \"poll\"")),
    }
    let records = match object.remove("tasks") {
        Some(Value::Array(records)) if !records.is_empty() => records,
        Some(Value::Array(_)) => {
            rejects.push("tasks is empty".into());
            Vec::new()
        }
        _ => {
            rejects.push("tasks must be a list of task records".into());
            Vec::new()
        }
    };
    for key in object.keys() {
        rejects.push(format!("unknown field `{key}`"));
    }
    let mut tasks = Vec::new();
    for (i, record) in records.into_iter().enumerate() {
        match decode_record(record) {
            Ok(task) => tasks.push(task),
            Err(reason) => rejects.push(format!("tasks[{i}]: {reason}")),
        }
    }
    if rejects.is_empty() {
        Ok((uid, tasks))
    } else {
        Err(rejects)
    }
}

async fn post_workload(State(shared): State<Arc<Shared>>, body: Bytes) -> Response {
    let (uid, tasks) = match parse_submission(&body) {
        Ok(parsed) => parsed,
        Err(rejects) => return bad_request(rejects),
    };
    let mut wlm = lock(&shared.wlm);
    let mut submissions = lock(&shared.submissions);
    let uid = uid.unwrap_or_else(|| loop {
        submissions.next += 1;
        let candidate = format!("submission.{:04}", submissions.next);
        if !submissions.tasks.contains_key(&candidate) {
            break candidate;
        }
    });
    if submissions.tasks.contains_key(&uid) {
        return bad_request(vec![format!("submission `{uid}` already exists")]);
    }
    let mut rejects: Vec<String> = tasks
        .iter()
        .filter(|t| wlm.registry().contains(&t.uid))
        .map(|t| format!("task `{}` already exists", t.uid))
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    rejects.extend(tasks.iter().filter(|t| !seen.insert(&t.uid)).map(|t| format!("task `{}` listed twice", t.uid)));
    if !rejects.is_empty() {
        return bad_request(rejects);
    }
    let uids: Vec<String> = tasks.iter().map(|t| t.uid.clone()).collect();
    if let Err(e) = wlm.submit_workload(tasks) {
        return bad_request(vec![e.to_string()]);
    }
    submissions.tasks.insert(uid.clone(), uids.clone());
    canonical(StatusCode::CREATED, &json!({ "uid": uid, "tasks": uids }))
}

fn workload_states(wlm: &WorkloadManager, uid: &str, tasks: &[String]) -> Value {
    let states: BTreeMap<&str, String> = tasks
        .iter()
        .map(|t| (t.as_str(), wlm.registry().current_state(t).unwrap_or_default()))
        .collect();
    json!({ "uid": uid, "tasks": states })
}

async fn get_workload(State(shared): State<Arc<Shared>>, Path(uid): Path<String>) -> Response {
    let wlm = lock(&shared.wlm);
    let tasks = lock(&shared.submissions).tasks.get(&uid).cloned();
    match tasks {
        Some(tasks) => canonical(StatusCode::OK, &workload_states(&wlm, &uid, &tasks)),
        None => not_found("workload", &uid),
    }
}

async fn delete_workload(State(shared): State<Arc<Shared>>, Path(uid): Path<String>) -> Response {
    let mut wlm = lock(&shared.wlm);
    let tasks = lock(&shared.submissions).tasks.get(&uid).cloned();
    let Some(tasks) = tasks else {
        return not_found("workload", &uid);
    };
    for task in &tasks {
        if let Err(e) = wlm.cancel_task(task) {
            return canonical(StatusCode::INTERNAL_SERVER_ERROR, &json!({ "error": e.to_string() }));
        }
    }
    canonical(StatusCode::OK, &workload_states(&wlm, &uid, &tasks))
}

async fn get_task(State(shared): State<Arc<Shared>>, Path(uid): Path<String>) -> Response {
    let wlm = lock(&shared.wlm);
    match wlm.registry().history(&uid) {
        Ok(history) if history.kind == TASK => canonical(StatusCode::OK, &history),
        _ => not_found("task", &uid),
    }
}

pub fn router(wlm: SharedManager) -> Router {
    let shared = Arc::new(Shared {
        wlm,
        submissions: Mutex::new(Submissions::default()),
    });
    Router::new()
        .route("/pilots", get(get_pilots))
        .route("/workloads", axum::routing::post(post_workload))
        .route("/workloads/:uid", get(get_workload).delete(delete_workload))
        .route("/tasks/:uid", get(get_task))
        .with_state(shared)
}

/// A running service plus the thread that drives the pool.
pub struct ServiceHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<JoinHandle<()>>,
    driver: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stop serving and driving. Pilots are left as they are.
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for handle in [self.server.take(), self.driver.take()].into_iter().flatten() {
            let _ = handle.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Serve the bridge endpoints on `addr` and drive the pool in the background.
pub fn serve(wlm: SharedManager, addr: &str) -> Result<ServiceHandle, BridgeError> {
    let bind = |e: std::io::Error| BridgeError::BindFailure {
        addr: addr.to_string(),
        reason: e.to_string(),
    };
    let listener = std::net::TcpListener::bind(addr).map_err(bind)?;
    listener.set_nonblocking(true).map_err(bind)?;
    let local_addr = listener.local_addr().map_err(bind)?;
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(bind)?;
    let app = router(wlm.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let server = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    tracing::error!("bridge listener: {e}");
                    return;
                }
            };
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                tracing::error!("bridge server: {e}");
            }
        });
    });

    let stop = Arc::new(AtomicBool::new(false));
    let driver = {
        let stop = stop.clone();
        std::thread::spawn(move || drive(&wlm, &stop))
    };
    Ok(ServiceHandle {
        local_addr,
        stop,
        shutdown: Some(tx),
        server: Some(server),
        driver: Some(driver),
    })
}

fn drive(wlm: &SharedManager, stop: &AtomicBool) {
    while !stop.load(Ordering::SeqCst) {
        let (clock, deadline) = {
            let mut wlm = lock(wlm);
            if let Err(e) = wlm.progress() {
                tracing::error!("bridge driver: {e}");
            }
            (wlm.registry().clock().clone(), wlm.next_deadline())
        };
        let idle = if clock.is_virtual() {
            // Virtual time only moves when something is due.
            deadline.is_none() || clock.wait(deadline).is_err()
        } else {
            true
        };
        if idle {
            std::thread::sleep(DRIVE_INTERVAL);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn submission_parsing() {
        let ok = br#"{"tasks":[{"uid":"a","executable":"echo","schema_version":1}],"callback":"poll"}"#;
        let (uid, tasks) = parse_submission(ok).unwrap();
        assert_eq!((uid, tasks.len()), (None, 1));
        let rejects = parse_submission(br#"{"tasks":[]}"#).unwrap_err();
        assert_eq!(rejects, ["tasks is empty"]);
        let rejects = parse_submission(br#"{"tasks":[{"uid":"a"}],"x":1,"callback":"push"}"#).unwrap_err();
        assert_eq!(rejects.len(), 3, "{rejects:?}");
        assert!(parse_submission(b"not json").is_err());
    }
}
