use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::BridgeError;
use crate::state::validate_uid;
use crate::workflow::TaskDescription;

pub const SCHEMA_VERSION: u64 = 1;
pub const TASK_FILE_SUFFIX: &str = ".task.json";

/// Compact JSON with object keys sorted at every level, newline-terminated.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled,
    // so going through a Value sorts every object.
    let value = serde_json::to_value(value).expect("serializable value");
    let mut text = serde_json::to_string(&value).expect("JSON value");
    text.push('\n');
    text
}

/// The exchange record: the task description fields plus `schema_version`.
pub fn encode_task(task: &TaskDescription) -> String {
    let mut value = serde_json::to_value(task).expect("task serializes");
    value
        .as_object_mut()
        .expect("task is an object")
        .insert("schema_version".into(), SCHEMA_VERSION.into());
    canonical_json(&value)
}

/// Decode one exchange record. Every problem becomes a reason string.
pub fn decode_record(mut value: Value) -> Result<TaskDescription, String> {
    let object = value.as_object_mut().ok_or("record is not a JSON object")?;
    match object.remove("schema_version") {
        None => return Err("missing schema_version".into()),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(format!("unsupported schema_version {v}")),
    }
    let task: TaskDescription = serde_json::from_value(value).map_err(|e| e.to_string())?;
    validate_uid(&task.uid).map_err(|e| e.to_string())?;
    let problems = task.problems();
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    Ok(task)
}

pub fn decode_task(text: &str) -> Result<TaskDescription, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    decode_record(value)
}

/// A file `import_tasks` could not use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

/// Write one `<uid>.task.json` per task. Each file is written to a temporary
/// name in `dir` and renamed into place; an existing file is never replaced.
pub fn export_tasks(dir: &Path, tasks: &[TaskDescription]) -> Result<usize, BridgeError> {
    let io = |e: std::io::Error| BridgeError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut seen = BTreeSet::new();
    for task in tasks {
        validate_uid(&task.uid)?;
        if !seen.insert(task.uid.as_str()) {
            return Err(BridgeError::DuplicateFile(task_path(dir, &task.uid)));
        }
    }
    for task in tasks {
        let path = task_path(dir, &task.uid);
        let mut tmp = tempfile::Builder::new().prefix(".export-").tempfile_in(dir).map_err(io)?;
        tmp.write_all(encode_task(task).as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist_noclobber(&path).map_err(|e| {
            if e.error.kind() == std::io::ErrorKind::AlreadyExists {
                BridgeError::DuplicateFile(path.clone())
            } else {
                BridgeError::Io {
                    path: path.clone(),
                    source: e.error,
                }
            }
        })?;
    }
    Ok(tasks.len())
}

pub fn task_path(dir: &Path, uid: &str) -> PathBuf {
    dir.join(format!("{uid}{TASK_FILE_SUFFIX}"))
}

/// Read every `*.task.json` in `dir`, in file name order. Files that do not
/// parse, fail validation or whose uid differs from their name are rejected
/// individually.
pub fn import_tasks(dir: &Path) -> Result<(Vec<TaskDescription>, Vec<Reject>), BridgeError> {
    let io = |e: std::io::Error| BridgeError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let named = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(TASK_FILE_SUFFIX));
        if named && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    let mut tasks = Vec::new();
    let mut rejects = Vec::new();
    for path in paths {
        let stem = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(TASK_FILE_SUFFIX))
            .unwrap_or_default()
            .to_string();
        let decoded = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| decode_task(&text))
            .and_then(|task| {
                if task.uid == stem {
                    Ok(task)
                } else {
                    Err(format!("uid `{}` does not match the file name", task.uid))
                }
            });
        match decoded {
            Ok(task) => tasks.push(task),
            Err(reason) => rejects.push(Reject { path, reason }),
        }
    }
    Ok((tasks, rejects))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::Parallelism;

    fn sample(uid: &str) -> TaskDescription {
        TaskDescription::new(uid, "echo")
            .args(["a", "b"])
            .cores(2, Parallelism::Openmp)
            .env("Z", "1")
            .env("A", "2")
    }

    #[test]
    fn encoding_is_canonical() {
        let text = encode_task(&sample("t1"));
        assert!(text.ends_with("}\n"));
        assert!(text.starts_with(r#"{"arguments":["a","b"],"cpu_count":2,"#));
        assert!(text.contains(r#""environment":{"A":"2","Z":"1"}"#));
        assert!(text.contains(r#""schema_version":1"#));
        assert_eq!(text, encode_task(&decode_task(&text).unwrap()));
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tasks = vec![sample("a"), sample("b"), sample("c")];
        assert_eq!(export_tasks(dir.path(), &tasks).unwrap(), 3);
        assert!(dir.path().join("b.task.json").is_file());
        let (back, rejects) = import_tasks(dir.path()).unwrap();
        assert_eq!(back, tasks);
        assert!(rejects.is_empty());
        assert!(matches!(export_tasks(dir.path(), &tasks[..1]), Err(BridgeError::DuplicateFile(_))));
    }

    #[test]
    fn truncated_file_is_rejected_alone() {
        let dir = tempfile::tempdir().unwrap();
        let tasks: Vec<_> = (0..5).map(|i| sample(&format!("t{i}"))).collect();
        export_tasks(dir.path(), &tasks).unwrap();
        let victim = task_path(dir.path(), "t2");
        let text = std::fs::read_to_string(&victim).unwrap();
        std::fs::write(&victim, &text[..text.len() / 2]).unwrap();
        let (back, rejects) = import_tasks(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(rejects.len(), 1);
        assert_eq!(rejects[0].path, victim);
    }

    #[test]
    fn record_problems() {
        assert!(decode_task(r#"{"uid":"x","executable":"e"}"#).unwrap_err().contains("schema_version"));
        assert!(decode_task(r#"{"uid":"x","executable":"e","schema_version":2}"#).is_err());
        assert!(decode_task(r#"{"uid":"x","executable":"e","schema_version":1,"extra":0}"#).is_err());
        assert!(decode_task(r#"{"uid":"a/b","executable":"e","schema_version":1}"#).is_err());
        assert!(decode_task(r#"{"uid":"x","executable":"e","schema_version":1}"#).is_ok());
    }

    #[test]
    fn empty_and_missing_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(import_tasks(dir.path()).unwrap(), (vec![], vec![]));
        let gone = dir.path().join("missing");
        assert!(matches!(import_tasks(&gone), Err(BridgeError::Io { .. })));
        assert!(matches!(export_tasks(&gone, &[sample("a")]), Err(BridgeError::Io { .. })));
    }
}
