//! Random registry call sequences checked against a hand-written transition
//! table.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata::clock::{Clock, VirtualClock};
use strata::state::{builtin_models, validate_trace, History, Registry, Trace};

const KINDS: [(&str, [&str; 4]); 3] = [
    ("task", ["NEW", "BOUND", "SCHEDULED", "EXECUTING"]),
    ("pilot", ["NEW", "SUBMITTED", "ACTIVE", ""]),
    ("job", ["NEW", "PENDING", "RUNNING", ""]),
];
const FINALS: [&str; 3] = ["DONE", "FAILED", "CANCELED"];
const TARGETS: [&str; 12] = [
    "NEW", "BOUND", "SCHEDULED", "EXECUTING", "SUBMITTED", "ACTIVE", "PENDING", "RUNNING", "DONE", "FAILED",
    "CANCELED", "BOGUS",
];

#[derive(Debug, Clone)]
struct Expected {
    kind: usize,
    /// Index into the kind's ordered states, or None once final.
    at: Option<usize>,
}

fn legal(e: &Expected, target: &str) -> bool {
    let Some(at) = e.at else { return false };
    let order = &KINDS[e.kind].1;
    FINALS.contains(&target) || order.get(at + 1).is_some_and(|next| !next.is_empty() && *next == target)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SequenceStats {
    pub calls: usize,
    pub rejected: usize,
    pub entities: usize,
}

/// Run `len` random calls on a fresh registry. Err describes the first
/// disagreement with the table or the first invalid surviving history.
pub fn run_sequence(seed: u64, len: usize) -> Result<SequenceStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = Arc::new(VirtualClock::new());
    let registry = Registry::new(clock.clone());
    let mut expected: BTreeMap<String, Expected> = BTreeMap::new();
    let mut stats = SequenceStats::default();
    for step in 0..len {
        if rng.gen_bool(0.3) {
            // Let time pass now and then; a frozen clock must still stamp in order.
            let now = clock.now_ns();
            clock.set(now + rng.gen_range(0..3_000));
        }
        let uid = format!("e{}", rng.gen_range(0..6));
        let known = expected.get(&uid).cloned();
        stats.calls += 1;
        let (accepted, should) = match rng.gen_range(0..10) {
            0 | 1 => {
                let kind = rng.gen_range(0..KINDS.len() + 1);
                let name = KINDS.get(kind).map_or("workflow", |k| k.0);
                let ok = registry.register_entity(&uid, name).is_ok();
                let should = known.is_none() && kind < KINDS.len();
                if ok && should {
                    expected.insert(uid.clone(), Expected { kind, at: Some(0) });
                }
                (ok, should)
            }
            2..=6 => {
                let target = TARGETS[rng.gen_range(0..TARGETS.len())];
                let ok = registry.advance(&uid, target).is_ok();
                let should = known.as_ref().is_some_and(|e| legal(e, target));
                if ok && should {
                    let e = expected.get_mut(&uid).unwrap();
                    e.at = if FINALS.contains(&target) {
                        None
                    } else {
                        KINDS[e.kind].1.iter().position(|s| *s == target)
                    };
                }
                (ok, should)
            }
            7 | 8 => {
                let ok = registry.record_event(&uid, &format!("ev{step}")).is_ok();
                (ok, known.as_ref().is_some_and(|e| e.at.is_some()))
            }
            _ => {
                let ok = registry.record_error(&uid, "E", "boom").is_ok();
                (ok, known.is_some())
            }
        };
        if accepted != should {
            return Err(format!("seed {seed} step {step} on {uid}: accepted={accepted}, table says {should}"));
        }
        if !accepted {
            stats.rejected += 1;
        }
    }
    stats.entities = expected.len();

    let models = builtin_models();
    for history in registry.histories() {
        let model = &models[&history.kind];
        let violations = validate_trace(&history, model);
        if !violations.is_empty() {
            return Err(format!("seed {seed}: {} has violations {violations:?}", history.uid));
        }
        check_monotone(&history).map_err(|e| format!("seed {seed}: {e}"))?;
        let e = &expected[&history.uid];
        let want = match e.at {
            Some(i) => KINDS[e.kind].1[i],
            None => history.current_state().filter(|s| FINALS.contains(s)).unwrap_or("<final>"),
        };
        if history.current_state() != Some(want) {
            return Err(format!("seed {seed}: {} ended in {:?}, table says {want}", history.uid, history.current_state()));
        }
    }
    let mut text = Vec::new();
    registry.export_trace(&mut text).map_err(|e| e.to_string())?;
    let trace = Trace::parse(&text[..]).map_err(|e| e.to_string())?;
    let violations = trace.validate(&models);
    if !violations.is_empty() {
        return Err(format!("seed {seed}: exported trace has violations {violations:?}"));
    }
    Ok(stats)
}

/// Every appended record, whatever its type, is stamped after the previous one.
pub fn check_monotone(history: &History) -> Result<(), String> {
    let mut stamps: Vec<u64> = history.states.iter().map(|s| s.ts_ns).collect();
    stamps.extend(history.events.iter().map(|e| e.ts_ns));
    stamps.extend(history.errors.iter().map(|e| e.ts_ns));
    stamps.sort_unstable();
    if stamps.windows(2).any(|w| w[0] == w[1]) {
        return Err(format!("{} has two records with one timestamp", history.uid));
    }
    if history.states.windows(2).any(|w| w[0].ts_ns >= w[1].ts_ns) {
        return Err(format!("{} state timestamps do not increase", history.uid));
    }
    Ok(())
}
