use std::collections::BTreeSet;

use serde::Serialize;

use super::StateError;

/// Ordered states of one entity kind.
///
/// Non-final states must be visited in list order, one step at a time. Any
/// final state may be entered from any non-final state, and nothing leaves a
/// final state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateModel {
    kind: String,
    states: Vec<String>,
    finals: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// Immediate successor in the non-final order, or a final state.
    Legal,
    /// Forward over at least one non-final state.
    Skips,
    /// Backwards or to the same state.
    Backwards,
    FromFinal,
    UnknownTarget,
    UnknownSource,
}

impl StateModel {
    pub fn new<S: AsRef<str>>(kind: &str, states: &[S], finals: &[S]) -> Result<Self, StateError> {
        if states.is_empty() {
            return Err(StateError::EmptyStates);
        }
        let mut seen = BTreeSet::new();
        for s in states {
            if !seen.insert(s.as_ref().to_string()) {
                return Err(StateError::DuplicateState(s.as_ref().to_string()));
            }
        }
        let mut final_set = BTreeSet::new();
        for f in finals {
            if !seen.contains(f.as_ref()) {
                return Err(StateError::FinalNotInStates(f.as_ref().to_string()));
            }
            final_set.insert(f.as_ref().to_string());
        }
        if states.iter().all(|s| final_set.contains(s.as_ref())) {
            return Err(StateError::NoInitialState);
        }
        Ok(Self {
            kind: kind.to_string(),
            states: states.iter().map(|s| s.as_ref().to_string()).collect(),
            finals: final_set,
        })
    }

    pub fn task() -> Self {
        use super::names::*;
        Self::new(
            TASK,
            &[NEW, BOUND, SCHEDULED, EXECUTING, DONE, FAILED, CANCELED],
            &[DONE, FAILED, CANCELED],
        )
        .expect("task model is well formed")
    }

    pub fn pilot() -> Self {
        use super::names::*;
        Self::new(
            PILOT,
            &[NEW, SUBMITTED, ACTIVE, DONE, FAILED, CANCELED],
            &[DONE, FAILED, CANCELED],
        )
        .expect("pilot model is well formed")
    }

    pub fn job() -> Self {
        use super::names::*;
        Self::new(
            JOB,
            &[NEW, PENDING, RUNNING, DONE, FAILED, CANCELED],
            &[DONE, FAILED, CANCELED],
        )
        .expect("job model is well formed")
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn finals(&self) -> &BTreeSet<String> {
        &self.finals
    }

    pub fn initial(&self) -> &str {
        self.non_final().next().expect("at least one non-final state")
    }

    pub fn is_final(&self, state: &str) -> bool {
        self.finals.contains(state)
    }

    pub fn contains(&self, state: &str) -> bool {
        self.states.iter().any(|s| s == state)
    }

    pub fn non_final(&self) -> impl Iterator<Item = &str> {
        self.states
            .iter()
            .map(String::as_str)
            .filter(|s| !self.finals.contains(*s))
    }

    fn rank(&self, state: &str) -> Option<usize> {
        self.non_final().position(|s| s == state)
    }

    /// Next non-final state after `state`, if any.
    pub fn successor(&self, state: &str) -> Option<&str> {
        let r = self.rank(state)?;
        self.non_final().nth(r + 1)
    }

    /// Non-final states strictly between `from` and `to`.
    pub fn skipped_between(&self, from: &str, to: &str) -> Vec<String> {
        match (self.rank(from), self.rank(to)) {
            (Some(a), Some(b)) if b > a + 1 => self
                .non_final()
                .skip(a + 1)
                .take(b - a - 1)
                .map(str::to_string)
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn classify(&self, from: &str, to: &str) -> Transition {
        if !self.contains(from) {
            return Transition::UnknownSource;
        }
        if !self.contains(to) {
            return Transition::UnknownTarget;
        }
        if self.is_final(from) {
            return Transition::FromFinal;
        }
        if self.is_final(to) {
            return Transition::Legal;
        }
        let (a, b) = (self.rank(from).unwrap(), self.rank(to).unwrap());
        match b.cmp(&(a + 1)) {
            std::cmp::Ordering::Equal => Transition::Legal,
            std::cmp::Ordering::Greater => Transition::Skips,
            std::cmp::Ordering::Less => Transition::Backwards,
        }
    }

    /// Position of `state` in the full list, used to check that a sequence of
    /// observed states never regresses.
    pub fn order_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::names::*;

    #[test]
    fn canonical_task_model() {
        let m = StateModel::task();
        assert_eq!(m.initial(), NEW);
        assert_eq!(m.successor(NEW), Some(BOUND));
        assert_eq!(m.successor(EXECUTING), None);
        assert_eq!(m.classify(NEW, BOUND), Transition::Legal);
        assert_eq!(m.classify(NEW, EXECUTING), Transition::Skips);
        assert_eq!(m.classify(SCHEDULED, BOUND), Transition::Backwards);
        assert_eq!(m.classify(NEW, CANCELED), Transition::Legal);
        assert_eq!(m.classify(DONE, CANCELED), Transition::FromFinal);
        assert_eq!(m.skipped_between(NEW, EXECUTING), vec![BOUND, SCHEDULED]);
    }

    #[test]
    fn rejects_degenerate_models() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            StateModel::new("x", &empty, &empty),
            Err(StateError::EmptyStates)
        ));
        assert!(matches!(
            StateModel::new("x", &["A", "B"], &["C"]),
            Err(StateError::FinalNotInStates(s)) if s == "C"
        ));
        assert!(matches!(
            StateModel::new("x", &["A", "A"], &[]),
            Err(StateError::DuplicateState(_))
        ));
        assert!(matches!(
            StateModel::new("x", &["A"], &["A"]),
            Err(StateError::NoInitialState)
        ));
    }
}
