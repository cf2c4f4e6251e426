//! Pilot unit scheduling compared against a brute-force list scheduler.
//!
//! Durations are whole time units. The pilot side drives the real
//! [`UnitScheduler`] event by event; the oracle steps time one unit at a time
//! and never looks at slot ids.

use strata::pilot::{Request, SlotMap, UnitScheduler};

/// (cpus, duration) per unit, in submission order.
pub type Instance = [(u32, u32)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    /// Unit ids in the order they started.
    pub order: Vec<usize>,
    pub starts: Vec<u32>,
    pub makespan: u32,
}

/// Time-stepped list scheduler. With `backfill` any queued unit that fits
/// starts; without, the queue head blocks the rest.
pub fn oracle(cores: u32, units: &Instance, backfill: bool) -> Schedule {
    let n = units.len();
    let mut starts = vec![u32::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut ends = vec![u32::MAX; n];
    let mut t = 0;
    loop {
        let busy: u32 = (0..n).filter(|&i| starts[i] <= t && t < ends[i]).map(|i| units[i].0).sum();
        let mut free = cores - busy;
        for i in 0..n {
            if starts[i] != u32::MAX {
                continue;
            }
            if units[i].0 <= free {
                free -= units[i].0;
                starts[i] = t;
                ends[i] = t + units[i].1;
                order.push(i);
            } else if !backfill {
                break;
            }
        }
        if order.len() == n {
            break;
        }
        t += 1;
    }
    let makespan = ends.iter().copied().max().unwrap_or(0);
    Schedule { order, starts, makespan }
}

/// The real scheduler with every unit queued at time zero.
pub fn pilot(cores: u32, units: &Instance, backfill: bool) -> Schedule {
    let n = units.len();
    let mut sched = UnitScheduler::new(SlotMap::new(cores, 0), backfill);
    for (i, &(cpus, _)) in units.iter().enumerate() {
        sched.enqueue(i, Request::cpus(cpus)).unwrap();
    }
    let mut starts = vec![0; n];
    let mut order = Vec::with_capacity(n);
    let mut running: Vec<(u32, usize)> = Vec::new();
    let mut t = 0;
    loop {
        for (i, _) in sched.tick() {
            starts[i] = t;
            order.push(i);
            running.push((t + units[i].1, i));
        }
        let Some(next) = running.iter().map(|r| r.0).min() else { break };
        t = next;
        running.retain(|&(end, i)| {
            if end == t {
                sched.release(&i);
            }
            end != t
        });
    }
    assert_eq!(sched.queue_len(), 0, "units left queued");
    let makespan = (0..n).map(|i| starts[i] + units[i].1).max().unwrap_or(0);
    Schedule { order, starts, makespan }
}

#[derive(Clone)]
struct PilotState {
    sched: UnitScheduler<u8>,
    t: u32,
    running: [(u32, u8); 8],
    len: usize,
    makespan: u32,
}

#[derive(Clone, Copy)]
struct OracleState {
    t: u32,
    running: [(u32, u32); 8],
    len: usize,
    makespan: u32,
}

impl OracleState {
    fn busy(&self) -> u32 {
        self.running[..self.len].iter().filter(|r| r.0 > self.t).map(|r| r.1).sum()
    }

    /// Step time until `cpus` fit, then start there.
    fn place(&mut self, cores: u32, cpus: u32, duration: u32) -> u32 {
        while cores - self.busy() < cpus {
            self.t += 1;
        }
        self.running[self.len] = (self.t + duration, cpus);
        self.len += 1;
        self.makespan = self.makespan.max(self.t + duration);
        self.t
    }
}

impl PilotState {
    /// Queue unit `id` and run the scheduler until it starts. Units ahead of
    /// it have all started already, so with strict FIFO it is the only one
    /// waiting.
    fn place(&mut self, id: u8, cpus: u32) -> u32 {
        self.sched.enqueue(id, Request::cpus(cpus)).unwrap();
        loop {
            let started = self.sched.tick();
            if let Some((unit, _)) = started.first() {
                assert_eq!((*unit, started.len()), (id, 1));
                return self.t;
            }
            let next = self.running[..self.len].iter().map(|r| r.0).min().expect("a blocked unit needs a running one");
            self.t = next;
            let mut kept = 0;
            for r in 0..self.len {
                let (end, unit) = self.running[r];
                if end == next {
                    self.sched.release(&unit);
                } else {
                    self.running[kept] = (end, unit);
                    kept += 1;
                }
            }
            self.len = kept;
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Coverage {
    pub instances: u64,
    pub mismatches: u64,
}

/// Every instance with up to `max_units` units on `cores` slots, unit sizes
/// 1..=cores and durations from `durations`, strict FIFO.
///
/// Instances sharing a prefix share its scheduling: under strict FIFO a unit
/// cannot start before the ones ahead of it, so appending a unit leaves their
/// start times alone. A unit's own start does not depend on its duration.
pub fn exhaustive_fifo(cores: u32, max_units: usize, durations: &[u32]) -> Coverage {
    let root = PilotState {
        sched: UnitScheduler::new(SlotMap::new(cores, 0), false),
        t: 0,
        running: [(0, 0); 8],
        len: 0,
        makespan: 0,
    };
    let oracle = OracleState { t: 0, running: [(0, 0); 8], len: 0, makespan: 0 };
    let mut cov = Coverage::default();
    descend(cores, max_units, durations, &root, oracle, 0, &mut cov);
    cov
}

fn descend(
    cores: u32,
    max_units: usize,
    durations: &[u32],
    pilot: &PilotState,
    oracle: OracleState,
    depth: usize,
    cov: &mut Coverage,
) {
    if depth == max_units {
        return;
    }
    for cpus in 1..=cores {
        let mut placed = pilot.clone();
        let start = placed.place(depth as u8, cpus);
        let (base_len, base_makespan) = (placed.len, placed.makespan);
        for &duration in durations {
            let mut o = oracle;
            let expected = o.place(cores, cpus, duration);
            placed.running[base_len] = (start + duration, depth as u8);
            placed.len = base_len + 1;
            placed.makespan = base_makespan.max(start + duration);
            cov.instances += 1;
            if start != expected || placed.makespan != o.makespan {
                cov.mismatches += 1;
                continue;
            }
            descend(cores, max_units, durations, &placed, o, depth + 1, cov);
        }
    }
}
