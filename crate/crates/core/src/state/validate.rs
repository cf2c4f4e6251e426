use serde::Serialize;

use super::model::{StateModel, Transition};
use super::registry::History;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation")]
pub enum Violation {
    EmptyHistory,
    UnknownKind { kind: String },
    UnknownState { state: String },
    WrongInitialState { expected: String, found: String },
    SkippedState { missing: String },
    OrderViolation { from: String, to: String },
    TransitionAfterFinal { from: String, to: String },
    NonMonotonicTimestamp { index: usize, previous_ns: u64, ts_ns: u64 },
    EventOutsideBracket { event: String, ts_ns: u64 },
    EventAfterFinal { event: String, ts_ns: u64 },
    ErrorStateMissing { code: String, state: String },
    ErrorEventMissing { code: String, event: String },
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::EmptyHistory => "EmptyHistory",
            Violation::UnknownKind { .. } => "UnknownKind",
            Violation::UnknownState { .. } => "UnknownState",
            Violation::WrongInitialState { .. } => "WrongInitialState",
            Violation::SkippedState { .. } => "SkippedState",
            Violation::OrderViolation { .. } => "OrderViolation",
            Violation::TransitionAfterFinal { .. } => "TransitionAfterFinal",
            Violation::NonMonotonicTimestamp { .. } => "NonMonotonicTimestamp",
            Violation::EventOutsideBracket { .. } => "EventOutsideBracket",
            Violation::EventAfterFinal { .. } => "EventAfterFinal",
            Violation::ErrorStateMissing { .. } => "ErrorStateMissing",
            Violation::ErrorEventMissing { .. } => "ErrorEventMissing",
        }
    }
}

/// Check one entity history against its model. An empty result means the
/// states are a prefix of the model order (optionally ending in one final
/// state), timestamps strictly increase, every event sits inside its bracket
/// and every error points at a recorded state and event.
pub fn validate_trace(history: &History, model: &StateModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let states = &history.states;
    let Some(first) = states.first() else {
        out.push(Violation::EmptyHistory);
        return out;
    };

    for record in states {
        if !model.contains(&record.state) {
            out.push(Violation::UnknownState {
                state: record.state.clone(),
            });
        }
    }
    if first.state != model.initial() {
        out.push(Violation::WrongInitialState {
            expected: model.initial().to_string(),
            found: first.state.clone(),
        });
    }
    for (idx, pair) in states.windows(2).enumerate() {
        let (from, to) = (&pair[0], &pair[1]);
        match model.classify(&from.state, &to.state) {
            Transition::Legal | Transition::UnknownSource | Transition::UnknownTarget => {}
            Transition::Skips => out.extend(
                model
                    .skipped_between(&from.state, &to.state)
                    .into_iter()
                    .map(|missing| Violation::SkippedState { missing }),
            ),
            Transition::Backwards => out.push(Violation::OrderViolation {
                from: from.state.clone(),
                to: to.state.clone(),
            }),
            Transition::FromFinal => out.push(Violation::TransitionAfterFinal {
                from: from.state.clone(),
                to: to.state.clone(),
            }),
        }
        if to.ts_ns <= from.ts_ns {
            out.push(Violation::NonMonotonicTimestamp {
                index: idx + 1,
                previous_ns: from.ts_ns,
                ts_ns: to.ts_ns,
            });
        }
    }

    for event in &history.events {
        let opening = states
            .iter()
            .rposition(|r| r.state == event.preceding && r.ts_ns <= event.ts_ns);
        let Some(i) = opening else {
            out.push(Violation::EventOutsideBracket {
                event: event.name.clone(),
                ts_ns: event.ts_ns,
            });
            continue;
        };
        if model.is_final(&states[i].state) {
            out.push(Violation::EventAfterFinal {
                event: event.name.clone(),
                ts_ns: event.ts_ns,
            });
            continue;
        }
        let closed_ok = match (&event.succeeding, states.get(i + 1)) {
            (None, None) => true,
            (Some(s), Some(next)) => next.state == *s && event.ts_ns <= next.ts_ns,
            _ => false,
        };
        if !closed_ok {
            out.push(Violation::EventOutsideBracket {
                event: event.name.clone(),
                ts_ns: event.ts_ns,
            });
        }
    }

    for error in &history.errors {
        if !states.iter().any(|r| r.state == error.state) {
            out.push(Violation::ErrorStateMissing {
                code: error.code.clone(),
                state: error.state.clone(),
            });
        }
        if let Some(event) = &error.event {
            if !history.events.iter().any(|e| e.name == *event) {
                out.push(Violation::ErrorEventMissing {
                    code: error.code.clone(),
                    event: event.clone(),
                });
            }
        }
    }
    out
}
