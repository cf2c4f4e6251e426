mod support;

use proptest::prelude::*;
use serde_json::json;
use strata::bridge::{decode_task, encode_task, export_tasks, import_tasks, task_path};
use support::bridge_flow::{call, start, two_task_flow};
use support::gen::any_task;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn exchange_round_trip_is_byte_canonical(task in any_task()) {
        let text = encode_task(&task);
        prop_assert_eq!(&encode_task(&task), &text);
        let back = decode_task(&text).unwrap();
        prop_assert_eq!(&back, &task);
        prop_assert_eq!(encode_task(&back), text.clone());

        let dir = tempfile::tempdir().unwrap();
        prop_assert_eq!(export_tasks(dir.path(), std::slice::from_ref(&task)).unwrap(), 1);
        let on_disk = std::fs::read_to_string(task_path(dir.path(), &task.uid)).unwrap();
        prop_assert_eq!(&on_disk, &text);
        let (imported, rejects) = import_tasks(dir.path()).unwrap();
        prop_assert!(rejects.is_empty());
        prop_assert_eq!(imported, vec![task]);
    }
}

#[test]
fn rest_flow_polls_two_tasks_to_done() {
    let dir = tempfile::tempdir().unwrap();
    let service = start(dir.path(), 2);
    let report = two_task_flow(&service);
    assert_eq!(report.final_states.values().collect::<Vec<_>>(), ["DONE", "DONE"], "{report:?}");
    assert!(report.regressions.is_empty(), "{:?}", report.regressions);
    assert!(report.capacity_mismatches.is_empty(), "{:?}", report.capacity_mismatches);

    let (status, history) = call("GET", &format!("{}/tasks/flow.a", service.base), None);
    assert_eq!(status, 200);
    let states: Vec<&str> = history["states"].as_array().unwrap().iter().map(|s| s["state"].as_str().unwrap()).collect();
    assert_eq!(states, ["NEW", "BOUND", "SCHEDULED", "EXECUTING", "DONE"]);

    let (status, pilots) = call("GET", &format!("{}/pilots", service.base), None);
    assert_eq!(status, 200);
    assert_eq!(pilots["total_cores"], 2);
    assert_eq!(pilots["free_cores"], 2);
    service.handle.shutdown();
}

#[test]
fn rest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let service = start(dir.path(), 1);
    let base = &service.base;
    assert_eq!(call("GET", &format!("{base}/workloads/nope"), None).0, 404);
    assert_eq!(call("DELETE", &format!("{base}/workloads/nope"), None).0, 404);
    assert_eq!(call("GET", &format!("{base}/tasks/nope"), None).0, 404);

    let (status, body) = call("POST", &format!("{base}/workloads"), Some(&json!({"tasks": []})));
    assert_eq!((status, body["rejects"][0].as_str()), (400, Some("tasks is empty")));
    let bad = json!({"tasks": [{"uid": "x", "executable": "echo"}], "callback": "push"});
    let (status, body) = call("POST", &format!("{base}/workloads"), Some(&bad));
    assert_eq!(status, 400);
    assert_eq!(body["rejects"].as_array().unwrap().len(), 2, "{body}");
    let (status, _) = call("POST", &format!("{base}/workloads"), Some(&json!("text")));
    assert_eq!(status, 400);

    // Pilots are not tasks.
    let ok = json!({"uid": "w", "tasks": [{"uid": "long", "executable": "/bin/sleep", "arguments": ["30"], "expected_duration_s": 30, "schema_version": 1}]});
    assert_eq!(call("POST", &format!("{base}/workloads"), Some(&ok)).0, 201);
    let (status, body) = call("POST", &format!("{base}/workloads"), Some(&ok));
    assert_eq!(status, 400, "{body}");
    let (_, pilots) = call("GET", &format!("{base}/pilots"), None);
    let pilot = pilots["pilots"][0]["uid"].as_str().unwrap().to_string();
    assert_eq!(call("GET", &format!("{base}/tasks/{pilot}"), None).0, 404);

    let (status, body) = call("DELETE", &format!("{base}/workloads/w"), None);
    assert_eq!(status, 200);
    assert_eq!(body["tasks"]["long"], "CANCELED");
    service.handle.shutdown();
}

#[test]
fn zero_pilots_serve_zero_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let service = start(dir.path(), 1);
    let (status, pilots) = call("GET", &format!("{}/pilots", service.base), None);
    assert_eq!(status, 200);
    assert_eq!(pilots, json!({"earliest_expiry": null, "free_cores": 0, "free_gpus": 0, "pilots": [], "total_cores": 0, "total_gpus": 0}));
}
