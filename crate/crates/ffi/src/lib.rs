//! C ABI over the state registry, the trace checker, the batch simulator and
//! the task exchange format.
//!
//! Every fallible function returns a [`StrataStatus`]. On failure a message
//! is kept per thread and can be read with [`strata_last_error`]. Strings
//! handed out through `out` parameters are owned by the caller and must be
//! released with [`strata_string_free`]. Handles are released with their
//! `*_free` function; passing NULL to any `*_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::sync::Arc;

use strata::bridge::{canonical_json, decode_record, export_tasks, import_tasks, BridgeError};
use strata::checks::{check_trace, ALL_CHECKS};
use strata::clock::{Clock, SystemClock, VirtualClock};
use strata::sim::{QueueTimeModel, SimCluster, SimError};
use strata::state::{Registry, StateError, Trace};
use strata::workflow::TaskDescription;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrataStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    InvalidTransition = 5,
    Io = 6,
    Parse = 7,
    Duplicate = 8,
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: StrataStatus, message: impl std::fmt::Display) -> StrataStatus {
    let text = CString::new(message.to_string().replace('\0', " ")).expect("NUL removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
    status
}

fn ok() -> StrataStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    StrataStatus::Ok
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn strata_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned through an `out` parameter.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn strata_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn strata_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, StrataStatus> {
    if p.is_null() {
        return Err(fail(StrataStatus::NullPointer, "NULL string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(StrataStatus::InvalidUtf8, e))
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> StrataStatus {
    if out.is_null() {
        return fail(StrataStatus::NullPointer, "NULL out pointer");
    }
    match CString::new(value) {
        Ok(s) => {
            *out = s.into_raw();
            ok()
        }
        Err(e) => fail(StrataStatus::Internal, e),
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

fn state_status(e: &StateError) -> StrataStatus {
    match e {
        StateError::UnknownEntity(_) | StateError::UnknownKind(_) => StrataStatus::NotFound,
        StateError::DuplicateEntity(_) => StrataStatus::Duplicate,
        StateError::InvalidUid { .. } => StrataStatus::InvalidArgument,
        _ => StrataStatus::InvalidTransition,
    }
}

fn state_err(e: StateError) -> StrataStatus {
    fail(state_status(&e), e)
}

/// Entity registry with its clock.
pub struct StrataRegistry {
    registry: Registry,
    virtual_clock: Option<Arc<VirtualClock>>,
}

/// A registry on the system clock, or on a virtual clock that only moves
/// through [`strata_registry_set_time_ns`].
#[no_mangle]
pub extern "C" fn strata_registry_new(virtual_time: bool) -> *mut StrataRegistry {
    let (clock, virtual_clock): (Arc<dyn Clock>, _) = if virtual_time {
        let c = Arc::new(VirtualClock::new());
        (c.clone(), Some(c))
    } else {
        (Arc::new(SystemClock::new()), None)
    };
    Box::into_raw(Box::new(StrataRegistry {
        registry: Registry::new(clock),
        virtual_clock,
    }))
}

/// # Safety
/// `reg` must be NULL or a live handle from [`strata_registry_new`].
#[no_mangle]
pub unsafe extern "C" fn strata_registry_free(reg: *mut StrataRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

unsafe fn registry<'a>(reg: *const StrataRegistry) -> Result<&'a StrataRegistry, StrataStatus> {
    reg.as_ref()
        .ok_or_else(|| fail(StrataStatus::NullPointer, "NULL registry handle"))
}

/// # Safety
/// `reg` must be a live registry handle.
#[no_mangle]
pub unsafe extern "C" fn strata_registry_set_time_ns(reg: *mut StrataRegistry, ns: u64) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    match &reg.virtual_clock {
        Some(c) => {
            c.set(ns);
            ok()
        }
        None => fail(StrataStatus::InvalidArgument, "registry runs on the system clock"),
    }
}

/// Register `uid` as an entity of `kind` (`task`, `pilot` or `job`).
///
/// # Safety
/// `reg` must be a live registry handle; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn strata_registry_register(
    reg: *mut StrataRegistry,
    uid: *const c_char,
    kind: *const c_char,
) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let (uid, kind) = (try_ffi!(text(uid)), try_ffi!(text(kind)));
    match reg.registry.register_entity(uid, kind) {
        Ok(_) => ok(),
        Err(e) => state_err(e),
    }
}

/// # Safety
/// As [`strata_registry_register`].
#[no_mangle]
pub unsafe extern "C" fn strata_registry_advance(
    reg: *mut StrataRegistry,
    uid: *const c_char,
    state: *const c_char,
) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let (uid, state) = (try_ffi!(text(uid)), try_ffi!(text(state)));
    match reg.registry.advance(uid, state) {
        Ok(_) => ok(),
        Err(e) => state_err(e),
    }
}

/// # Safety
/// As [`strata_registry_register`].
#[no_mangle]
pub unsafe extern "C" fn strata_registry_record_event(
    reg: *mut StrataRegistry,
    uid: *const c_char,
    name: *const c_char,
) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let (uid, name) = (try_ffi!(text(uid)), try_ffi!(text(name)));
    match reg.registry.record_event(uid, name) {
        Ok(_) => ok(),
        Err(e) => state_err(e),
    }
}

/// # Safety
/// As [`strata_registry_register`].
#[no_mangle]
pub unsafe extern "C" fn strata_registry_record_error(
    reg: *mut StrataRegistry,
    uid: *const c_char,
    code: *const c_char,
    message: *const c_char,
) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let (uid, code, message) = (try_ffi!(text(uid)), try_ffi!(text(code)), try_ffi!(text(message)));
    match reg.registry.record_error(uid, code, message) {
        Ok(_) => ok(),
        Err(e) => state_err(e),
    }
}

/// Current state of `uid`, written to `*out` (free with [`strata_string_free`]).
///
/// # Safety
/// As [`strata_registry_register`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_registry_current_state(
    reg: *const StrataRegistry,
    uid: *const c_char,
    out: *mut *mut c_char,
) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let uid = try_ffi!(text(uid));
    match reg.registry.current_state(uid) {
        Ok(state) => put_string(out, state),
        Err(e) => state_err(e),
    }
}

/// Write the registry's trace as NDJSON to `path`.
///
/// # Safety
/// As [`strata_registry_register`].
#[no_mangle]
pub unsafe extern "C" fn strata_registry_export_trace(reg: *const StrataRegistry, path: *const c_char) -> StrataStatus {
    let reg = try_ffi!(registry(reg));
    let path = try_ffi!(text(path));
    match reg.registry.export_trace_file(Path::new(path)) {
        Ok(_) => ok(),
        Err(e) => fail(StrataStatus::Io, format!("{path}: {e}")),
    }
}

/// Validate a trace file. `checks` is a comma-separated list of check names,
/// or NULL for all of them. The number of violations goes to
/// `*out_violations`; the canonical JSON list of them to `*out_json` when
/// `out_json` is not NULL.
///
/// # Safety
/// Strings must be NUL-terminated; out pointers writable or NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn strata_trace_check(
    path: *const c_char,
    checks: *const c_char,
    out_violations: *mut usize,
    out_json: *mut *mut c_char,
) -> StrataStatus {
    let path = try_ffi!(text(path));
    if out_violations.is_null() {
        return fail(StrataStatus::NullPointer, "NULL out_violations");
    }
    let names: Vec<String> = if checks.is_null() {
        ALL_CHECKS.iter().map(|c| c.to_string()).collect()
    } else {
        try_ffi!(text(checks))
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    };
    let trace = match Trace::read_file(Path::new(path)) {
        Ok(t) => t,
        Err(e) => return fail(StrataStatus::Parse, format!("{path}: {e}")),
    };
    let violations = match check_trace(&trace, &names) {
        Ok(v) => v,
        Err(e) => return fail(StrataStatus::InvalidArgument, e),
    };
    *out_violations = violations.len();
    if out_json.is_null() {
        ok()
    } else {
        put_string(out_json, canonical_json(&violations))
    }
}

/// Batch simulator handle.
pub struct StrataSimCluster {
    cluster: SimCluster,
}

/// `model_json` is a queue-time model such as `{"kind":"constant","delay_s":10}`;
/// NULL selects the backlog-only model. Returns NULL on error.
///
/// # Safety
/// Strings must be NUL-terminated or NULL where allowed.
#[no_mangle]
pub unsafe extern "C" fn strata_sim_new(
    resource_id: *const c_char,
    nodes: u32,
    cores_per_node: u32,
    gpus_per_node: u32,
    model_json: *const c_char,
) -> *mut StrataSimCluster {
    let Ok(id) = text(resource_id) else {
        return std::ptr::null_mut();
    };
    let model = if model_json.is_null() {
        QueueTimeModel::Backlog
    } else {
        let Ok(json) = text(model_json) else {
            return std::ptr::null_mut();
        };
        match serde_json::from_str::<QueueTimeModel>(json) {
            Ok(m) => m,
            Err(e) => {
                fail(StrataStatus::Parse, e);
                return std::ptr::null_mut();
            }
        }
    };
    if let Err(e) = model.validate() {
        fail(StrataStatus::InvalidArgument, e);
        return std::ptr::null_mut();
    }
    if nodes == 0 || cores_per_node == 0 || nodes.checked_mul(cores_per_node).is_none() {
        fail(StrataStatus::InvalidArgument, "nodes and cores_per_node must be positive");
        return std::ptr::null_mut();
    }
    ok();
    Box::into_raw(Box::new(StrataSimCluster {
        cluster: SimCluster::new(id, nodes, cores_per_node, gpus_per_node, model),
    }))
}

/// # Safety
/// `sim` must be NULL or a live handle from [`strata_sim_new`].
#[no_mangle]
pub unsafe extern "C" fn strata_sim_free(sim: *mut StrataSimCluster) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

unsafe fn sim<'a>(sim: *mut StrataSimCluster) -> Result<&'a mut SimCluster, StrataStatus> {
    sim.as_mut()
        .map(|s| &mut s.cluster)
        .ok_or_else(|| fail(StrataStatus::NullPointer, "NULL simulator handle"))
}

fn sim_err(e: SimError) -> StrataStatus {
    let status = match &e {
        SimError::UnknownJob(_) => StrataStatus::NotFound,
        SimError::DuplicateJob(_) => StrataStatus::Duplicate,
        SimError::AlreadyFinal(_) => StrataStatus::InvalidTransition,
        _ => StrataStatus::InvalidArgument,
    };
    fail(status, e)
}

/// # Safety
/// `sim` must be a live handle; `uid` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn strata_sim_submit(
    sim_handle: *mut StrataSimCluster,
    uid: *const c_char,
    cores: u32,
    runtime_s: f64,
) -> StrataStatus {
    let cluster = try_ffi!(sim(sim_handle));
    let uid = try_ffi!(text(uid));
    match cluster.submit(uid, cores, runtime_s) {
        Ok(()) => ok(),
        Err(e) => sim_err(e),
    }
}

/// Advance the simulator to `t` seconds.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn strata_sim_advance_to(sim_handle: *mut StrataSimCluster, t: f64) -> StrataStatus {
    let cluster = try_ffi!(sim(sim_handle));
    match cluster.advance_to(t) {
        Ok(_) => ok(),
        Err(e) => sim_err(e),
    }
}

/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn strata_sim_estimate_wait(
    sim_handle: *mut StrataSimCluster,
    cores: u32,
    out: *mut f64,
) -> StrataStatus {
    let cluster = try_ffi!(sim(sim_handle));
    if out.is_null() {
        return fail(StrataStatus::NullPointer, "NULL out pointer");
    }
    match cluster.estimate_wait(cores) {
        Ok(w) => {
            *out = w;
            ok()
        }
        Err(e) => sim_err(e),
    }
}

/// Start time of job `uid` in seconds, or a negative value while it has not
/// started.
///
/// # Safety
/// `sim` must be a live handle; `uid` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn strata_sim_job_start(
    sim_handle: *mut StrataSimCluster,
    uid: *const c_char,
    out: *mut f64,
) -> StrataStatus {
    let cluster = try_ffi!(sim(sim_handle));
    let uid = try_ffi!(text(uid));
    if out.is_null() {
        return fail(StrataStatus::NullPointer, "NULL out pointer");
    }
    match cluster.job(uid) {
        Some(job) => {
            *out = job.start_s.unwrap_or(-1.0);
            ok()
        }
        None => fail(StrataStatus::NotFound, format!("unknown job `{uid}`")),
    }
}

fn bridge_err(e: BridgeError) -> StrataStatus {
    let status = match &e {
        BridgeError::DuplicateFile(_) => StrataStatus::Duplicate,
        BridgeError::State(_) => StrataStatus::InvalidArgument,
        _ => StrataStatus::Io,
    };
    fail(status, e)
}

/// Export a JSON array of exchange records (each with `schema_version`) into
/// `dir` as `<uid>.task.json` files. The file count goes to `*out_count`.
///
/// # Safety
/// Strings must be NUL-terminated; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn strata_tasks_export(
    dir: *const c_char,
    records_json: *const c_char,
    out_count: *mut usize,
) -> StrataStatus {
    let dir = try_ffi!(text(dir));
    let json = try_ffi!(text(records_json));
    if out_count.is_null() {
        return fail(StrataStatus::NullPointer, "NULL out_count");
    }
    let records: Vec<serde_json::Value> = match serde_json::from_str(json) {
        Ok(r) => r,
        Err(e) => return fail(StrataStatus::Parse, e),
    };
    let mut tasks: Vec<TaskDescription> = Vec::with_capacity(records.len());
    for (i, record) in records.into_iter().enumerate() {
        match decode_record(record) {
            Ok(t) => tasks.push(t),
            Err(reason) => return fail(StrataStatus::Parse, format!("record {i}: {reason}")),
        }
    }
    match export_tasks(Path::new(dir), &tasks) {
        Ok(n) => {
            *out_count = n;
            ok()
        }
        Err(e) => bridge_err(e),
    }
}

/// Import every `*.task.json` in `dir`. `*out_json` receives
/// `{"rejects":[{"path","reason"}...],"tasks":[record...]}` in canonical form.
///
/// # Safety
/// `dir` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn strata_tasks_import(dir: *const c_char, out_json: *mut *mut c_char) -> StrataStatus {
    let dir = try_ffi!(text(dir));
    match import_tasks(Path::new(dir)) {
        Ok((tasks, rejects)) => {
            let records: Vec<serde_json::Value> = tasks
                .iter()
                .map(|t| serde_json::from_str(&strata::bridge::encode_task(t)).expect("encoded record"))
                .collect();
            let body = serde_json::json!({ "tasks": records, "rejects": rejects });
            put_string(out_json, canonical_json(&body))
        }
        Err(e) => bridge_err(e),
    }
}
