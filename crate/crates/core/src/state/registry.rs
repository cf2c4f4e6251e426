use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;

use super::model::{StateModel, Transition};
use super::trace::{RecordType, TraceLine};
use super::{validate_uid, StateError};
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateRecord {
    pub entity_uid: String,
    pub state: String,
    pub ts_ns: u64,
}

/// A free-form occurrence contained between two states. `succeeding` stays
/// `None` while the entity has not left `preceding`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub entity_uid: String,
    pub name: String,
    pub ts_ns: u64,
    pub preceding: String,
    pub succeeding: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorRecord {
    pub entity_uid: String,
    pub state: String,
    pub event: Option<String>,
    pub code: String,
    pub message: String,
    pub ts_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct History {
    pub uid: String,
    pub kind: String,
    pub states: Vec<StateRecord>,
    pub events: Vec<Event>,
    pub errors: Vec<ErrorRecord>,
}

impl History {
    pub fn new(uid: &str, kind: &str) -> Self {
        Self {
            uid: uid.to_string(),
            kind: kind.to_string(),
            states: Vec::new(),
            events: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn current(&self) -> Option<&StateRecord> {
        self.states.last()
    }

    pub fn current_state(&self) -> Option<&str> {
        self.states.last().map(|r| r.state.as_str())
    }

    /// Timestamp of the first record in `state`.
    pub fn entered(&self, state: &str) -> Option<u64> {
        self.states.iter().find(|r| r.state == state).map(|r| r.ts_ns)
    }

    pub fn final_record(&self) -> Option<&StateRecord> {
        self.states.last().filter(|r| super::names::is_final(&r.state))
    }

    pub fn event_names(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.name.as_str())
    }

    pub(crate) fn lines(&self, virtual_time: bool) -> Vec<TraceLine> {
        let line = |record: RecordType, name: &str, ts: u64| TraceLine {
            uid: self.uid.clone(),
            kind: self.kind.clone(),
            record,
            name: name.to_string(),
            ts_ns: ts,
            virtual_time,
        };
        let mut out = Vec::with_capacity(self.states.len() + self.events.len() + self.errors.len());
        out.extend(self.states.iter().map(|r| line(RecordType::State, &r.state, r.ts_ns)));
        out.extend(self.events.iter().map(|e| line(RecordType::Event, &e.name, e.ts_ns)));
        out.extend(self.errors.iter().map(|e| line(RecordType::Error, &e.code, e.ts_ns)));
        out
    }
}

/// Thread-safe store of state models and entity histories.
///
/// Readers run concurrently. Appends to one entity are serialized by that
/// entity's lock, and every timestamp handed out is strictly greater than all
/// earlier ones across the whole registry, so causally later records always
/// sort later.
#[derive(Debug)]
pub struct Registry {
    clock: Arc<dyn Clock>,
    models: RwLock<BTreeMap<String, Arc<StateModel>>>,
    entities: RwLock<HashMap<String, Arc<Mutex<History>>>>,
    last_ts: AtomicU64,
}

impl Registry {
    /// Registry with the task, pilot and job models preinstalled.
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        let registry = Self::bare(clock);
        for model in [StateModel::task(), StateModel::pilot(), StateModel::job()] {
            registry.insert_model(model).expect("fresh registry");
        }
        registry
    }

    pub fn bare(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            models: RwLock::new(BTreeMap::new()),
            entities: RwLock::new(HashMap::new()),
            last_ts: AtomicU64::new(0),
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now_ns(&self) -> u64 {
        self.clock.now_ns()
    }

    pub fn register_model<S: AsRef<str>>(
        &self,
        kind: &str,
        states: &[S],
        finals: &[S],
    ) -> Result<Arc<StateModel>, StateError> {
        self.insert_model(StateModel::new(kind, states, finals)?)
    }

    fn insert_model(&self, model: StateModel) -> Result<Arc<StateModel>, StateError> {
        let mut models = self.models.write().unwrap();
        if models.contains_key(model.kind()) {
            return Err(StateError::DuplicateKind(model.kind().to_string()));
        }
        let model = Arc::new(model);
        models.insert(model.kind().to_string(), model.clone());
        Ok(model)
    }

    pub fn model(&self, kind: &str) -> Option<Arc<StateModel>> {
        self.models.read().unwrap().get(kind).cloned()
    }

    pub fn models(&self) -> BTreeMap<String, Arc<StateModel>> {
        self.models.read().unwrap().clone()
    }

    fn stamp(&self) -> u64 {
        let now = self.clock.now_ns();
        let prev = self
            .last_ts
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |last| {
                Some(now.max(last + 1))
            })
            .expect("closure always returns Some");
        now.max(prev + 1)
    }

    fn entity(&self, uid: &str) -> Result<Arc<Mutex<History>>, StateError> {
        self.entities
            .read()
            .unwrap()
            .get(uid)
            .cloned()
            .ok_or_else(|| StateError::UnknownEntity(uid.to_string()))
    }

    /// Create an entity in its model's initial state.
    pub fn register_entity(&self, uid: &str, kind: &str) -> Result<StateRecord, StateError> {
        validate_uid(uid)?;
        let model = self
            .model(kind)
            .ok_or_else(|| StateError::UnknownKind(kind.to_string()))?;
        let mut entities = self.entities.write().unwrap();
        if entities.contains_key(uid) {
            return Err(StateError::DuplicateEntity(uid.to_string()));
        }
        let mut history = History::new(uid, kind);
        let record = StateRecord {
            entity_uid: uid.to_string(),
            state: model.initial().to_string(),
            ts_ns: self.stamp(),
        };
        history.states.push(record.clone());
        entities.insert(uid.to_string(), Arc::new(Mutex::new(history)));
        Ok(record)
    }

    pub fn contains(&self, uid: &str) -> bool {
        self.entities.read().unwrap().contains_key(uid)
    }

    pub fn advance(&self, uid: &str, target: &str) -> Result<StateRecord, StateError> {
        let entity = self.entity(uid)?;
        let mut history = entity.lock().unwrap();
        let model = self
            .model(&history.kind)
            .ok_or_else(|| StateError::UnknownKind(history.kind.clone()))?;
        let current = history.current_state().expect("registered entities have a state").to_string();
        match model.classify(&current, target) {
            Transition::Legal => {}
            Transition::FromFinal => {
                return Err(StateError::FinalStateFrozen {
                    uid: uid.to_string(),
                    state: current,
                })
            }
            Transition::UnknownTarget | Transition::UnknownSource => {
                return Err(StateError::UnknownState {
                    uid: uid.to_string(),
                    kind: history.kind.clone(),
                    state: target.to_string(),
                })
            }
            Transition::Skips | Transition::Backwards => {
                return Err(StateError::OrderViolation {
                    uid: uid.to_string(),
                    from: current,
                    to: target.to_string(),
                })
            }
        }
        let record = StateRecord {
            entity_uid: uid.to_string(),
            state: target.to_string(),
            ts_ns: self.stamp(),
        };
        for event in history.events.iter_mut().filter(|e| e.succeeding.is_none()) {
            event.succeeding = Some(target.to_string());
        }
        history.states.push(record.clone());
        Ok(record)
    }

    /// Step through every intermediate non-final state up to `target`. A final
    /// target is reached with a single jump.
    pub fn advance_through(&self, uid: &str, target: &str) -> Result<Vec<StateRecord>, StateError> {
        let kind = self.kind_of(uid)?;
        let model = self.model(&kind).ok_or(StateError::UnknownKind(kind))?;
        let current = self.current_state(uid)?;
        let mut out = Vec::new();
        for step in model.skipped_between(&current, target) {
            out.push(self.advance(uid, &step)?);
        }
        out.push(self.advance(uid, target)?);
        Ok(out)
    }

    pub fn record_event(&self, uid: &str, name: &str) -> Result<Event, StateError> {
        let entity = self.entity(uid)?;
        let mut history = entity.lock().unwrap();
        let current = history.current_state().unwrap().to_string();
        if super::names::is_final(&current)
            || self.model(&history.kind).is_some_and(|m| m.is_final(&current))
        {
            return Err(StateError::EventAfterFinal {
                uid: uid.to_string(),
                state: current,
            });
        }
        let event = Event {
            entity_uid: uid.to_string(),
            name: name.to_string(),
            ts_ns: self.stamp(),
            preceding: current,
            succeeding: None,
        };
        history.events.push(event.clone());
        Ok(event)
    }

    /// Attach an error to the entity's current state and its most recent
    /// event still pending in that state.
    pub fn record_error(&self, uid: &str, code: &str, message: &str) -> Result<ErrorRecord, StateError> {
        let entity = self.entity(uid)?;
        let mut history = entity.lock().unwrap();
        let state = history.current_state().unwrap().to_string();
        let entered = history.current().unwrap().ts_ns;
        let event = history
            .events
            .iter()
            .rev()
            .find(|e| e.ts_ns >= entered && e.preceding == state)
            .map(|e| e.name.clone());
        let record = ErrorRecord {
            entity_uid: uid.to_string(),
            state,
            event,
            code: code.to_string(),
            message: message.to_string(),
            ts_ns: self.stamp(),
        };
        history.errors.push(record.clone());
        Ok(record)
    }

    pub fn current_state(&self, uid: &str) -> Result<String, StateError> {
        let entity = self.entity(uid)?;
        let history = entity.lock().unwrap();
        Ok(history.current_state().unwrap().to_string())
    }

    pub fn is_final(&self, uid: &str) -> Result<bool, StateError> {
        let entity = self.entity(uid)?;
        let history = entity.lock().unwrap();
        let state = history.current_state().unwrap();
        Ok(self.model(&history.kind).is_some_and(|m| m.is_final(state)))
    }

    pub fn kind_of(&self, uid: &str) -> Result<String, StateError> {
        Ok(self.entity(uid)?.lock().unwrap().kind.clone())
    }

    pub fn history(&self, uid: &str) -> Result<History, StateError> {
        Ok(self.entity(uid)?.lock().unwrap().clone())
    }

    pub fn uids_of_kind(&self, kind: &str) -> Vec<String> {
        let entities = self.entities.read().unwrap();
        let mut out: Vec<String> = entities
            .iter()
            .filter(|(_, h)| h.lock().unwrap().kind == kind)
            .map(|(uid, _)| uid.clone())
            .collect();
        out.sort();
        out
    }

    /// Current state of every entity of `kind`.
    pub fn snapshot(&self, kind: &str) -> BTreeMap<String, String> {
        let entities = self.entities.read().unwrap();
        entities
            .values()
            .filter_map(|h| {
                let h = h.lock().unwrap();
                (h.kind == kind).then(|| (h.uid.clone(), h.current_state().unwrap().to_string()))
            })
            .collect()
    }

    pub fn histories(&self) -> Vec<History> {
        let entities = self.entities.read().unwrap();
        let mut out: Vec<History> = entities.values().map(|h| h.lock().unwrap().clone()).collect();
        out.sort_by(|a, b| a.uid.cmp(&b.uid));
        out
    }

    /// Every record of every entity, ordered by timestamp.
    pub fn trace_lines(&self) -> Vec<TraceLine> {
        let virtual_time = self.clock.is_virtual();
        let mut lines: Vec<TraceLine> = self
            .histories()
            .iter()
            .flat_map(|h| h.lines(virtual_time))
            .collect();
        lines.sort_by_key(|l| l.ts_ns);
        lines
    }

    pub fn export_trace<W: Write>(&self, mut out: W) -> io::Result<usize> {
        let lines = self.trace_lines();
        for line in &lines {
            serde_json::to_writer(&mut out, line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(lines.len())
    }

    pub fn export_trace_file(&self, path: &Path) -> io::Result<usize> {
        let file = std::fs::File::create(path)?;
        self.export_trace(io::BufWriter::new(file))
    }
}
