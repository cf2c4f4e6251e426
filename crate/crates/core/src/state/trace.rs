//! Newline-delimited trace export and import.
//!
//! One JSON object per line with keys in the fixed order
//! `uid, kind, type, name, ts_ns`. Traces recorded against a virtual clock add
//! a trailing `"virtual": true`.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::registry::{ErrorRecord, Event, History, Registry, StateRecord};
use super::validate::{validate_trace, Violation};
use super::StateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordType {
    State,
    Event,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub uid: String,
    pub kind: String,
    #[serde(rename = "type")]
    pub record: RecordType,
    pub name: String,
    pub ts_ns: u64,
    #[serde(rename = "virtual", default, skip_serializing_if = "std::ops::Not::not")]
    pub virtual_time: bool,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

/// Entity histories rebuilt from a trace, in the order lines appeared.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub histories: BTreeMap<String, History>,
    pub virtual_time: bool,
}

impl Trace {
    pub fn from_registry(registry: &Registry) -> Self {
        Self {
            histories: registry.histories().into_iter().map(|h| (h.uid.clone(), h)).collect(),
            virtual_time: registry.clock().is_virtual(),
        }
    }

    pub fn read_file(path: &Path) -> Result<Self, TraceError> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, TraceError> {
        let mut trace = Trace::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            trace.virtual_time |= parsed.virtual_time;
            trace.push(parsed).map_err(|message| TraceError::Parse {
                line: idx + 1,
                message,
            })?;
        }
        Ok(trace)
    }

    fn push(&mut self, line: TraceLine) -> Result<(), String> {
        let history = self
            .histories
            .entry(line.uid.clone())
            .or_insert_with(|| History::new(&line.uid, &line.kind));
        if history.kind != line.kind {
            return Err(format!(
                "entity `{}` appears as both {} and {}",
                line.uid, history.kind, line.kind
            ));
        }
        match line.record {
            RecordType::State => {
                for event in history.events.iter_mut().filter(|e| e.succeeding.is_none()) {
                    event.succeeding = Some(line.name.clone());
                }
                history.states.push(StateRecord {
                    entity_uid: line.uid,
                    state: line.name,
                    ts_ns: line.ts_ns,
                });
            }
            RecordType::Event => {
                // An event before any state has no bracket; the validator flags it.
                let preceding = history.current_state().unwrap_or_default().to_string();
                history.events.push(Event {
                    entity_uid: line.uid,
                    name: line.name,
                    ts_ns: line.ts_ns,
                    preceding,
                    succeeding: None,
                });
            }
            RecordType::Error => {
                let state = history.current_state().unwrap_or_default().to_string();
                let event = history
                    .events
                    .iter()
                    .rev()
                    .find(|e| e.succeeding.is_none() && e.preceding == state)
                    .map(|e| e.name.clone());
                history.errors.push(ErrorRecord {
                    entity_uid: line.uid,
                    state,
                    event,
                    code: line.name,
                    message: String::new(),
                    ts_ns: line.ts_ns,
                });
            }
        }
        Ok(())
    }

    /// Run the per-entity validator over every history. Kinds missing from
    /// `models` are reported rather than skipped.
    pub fn validate(&self, models: &BTreeMap<String, StateModel>) -> Vec<(String, Violation)> {
        let mut out = Vec::new();
        for (uid, history) in &self.histories {
            match models.get(&history.kind) {
                Some(model) => {
                    out.extend(validate_trace(history, model).into_iter().map(|v| (uid.clone(), v)))
                }
                None => out.push((
                    uid.clone(),
                    Violation::UnknownKind {
                        kind: history.kind.clone(),
                    },
                )),
            }
        }
        out
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a History> + 'a {
        self.histories.values().filter(move |h| h.kind == kind)
    }

    pub fn get(&self, uid: &str) -> Option<&History> {
        self.histories.get(uid)
    }
}

/// The models a trace from this crate may contain.
pub fn builtin_models() -> BTreeMap<String, StateModel> {
    [StateModel::task(), StateModel::pilot(), StateModel::job()]
        .into_iter()
        .map(|m| (m.kind().to_string(), m))
        .collect()
}
