//! Simulated batch queue scenarios and an independent FCFS replay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata::sim::{BackgroundJob, QueueTimeModel, SimCluster};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub nodes: u32,
    pub cores_per_node: u32,
    pub load: Vec<BackgroundJob>,
}

impl Scenario {
    pub fn total(&self) -> u32 {
        self.nodes * self.cores_per_node
    }

    pub fn cluster(&self) -> SimCluster {
        let mut c = SimCluster::new("sim", self.nodes, self.cores_per_node, 0, QueueTimeModel::Backlog);
        c.inject_background_load(&self.load).unwrap();
        c
    }
}

/// Up to `max_jobs` background jobs with whole-second arrivals and runtimes.
pub fn random_scenario(rng: &mut ChaCha8Rng, max_jobs: usize) -> Scenario {
    let nodes = rng.gen_range(1..=4);
    let cores_per_node = rng.gen_range(1..=8);
    let total = nodes * cores_per_node;
    let n = rng.gen_range(0..=max_jobs);
    let load = (0..n)
        .map(|_| BackgroundJob {
            arrival_s: f64::from(rng.gen_range(0..100u32)),
            cores: rng.gen_range(1..=total),
            runtime_s: f64::from(rng.gen_range(1..=60u32)),
        })
        .collect();
    Scenario { nodes, cores_per_node, load }
}

/// Start time of every job under strict FCFS, jobs ordered by arrival with
/// ties kept in input order.
pub fn fcfs_starts(total: u32, jobs: &[(f64, u32, f64)]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| jobs[a].0.total_cmp(&jobs[b].0));
    let mut starts = vec![0.0; jobs.len()];
    let mut running: Vec<(f64, u32)> = Vec::new();
    let mut floor = 0.0f64;
    for i in order {
        let (arrival, cores, runtime) = jobs[i];
        let mut t = floor.max(arrival);
        loop {
            let busy: u32 = running.iter().filter(|r| r.0 > t).map(|r| r.1).sum();
            if total - busy >= cores {
                break;
            }
            t = running.iter().map(|r| r.0).filter(|&e| e > t).fold(f64::INFINITY, f64::min);
        }
        starts[i] = t;
        floor = t;
        running.push((t + runtime, cores));
    }
    starts
}

/// Step event by event, checking the capacity invariant after each one.
pub fn drain_checking_capacity(cluster: &mut SimCluster) -> Result<usize, String> {
    let mut steps = 0;
    while let Some(t) = cluster.next_event_time() {
        cluster.advance_to(t).map_err(|e| e.to_string())?;
        steps += 1;
        let running: u32 = cluster.jobs().filter(|j| j.start_s.is_some() && !j.is_final()).map(|j| j.cores).sum();
        if running > cluster.total_cores() || running != cluster.used_cores() {
            return Err(format!("t={t}: running cores {running}, used {}, total {}", cluster.used_cores(), cluster.total_cores()));
        }
    }
    Ok(steps)
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateCheck {
    pub estimate: f64,
    pub observed: f64,
    pub oracle: f64,
}

/// Advance past every arrival, ask for an estimate, then submit the request
/// and watch when it really starts.
pub fn estimate_vs_observed(seed: u64) -> Result<EstimateCheck, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = random_scenario(&mut rng, 20);
    let mut cluster = scenario.cluster();
    let now = f64::from(rng.gen_range(100..=130u32));
    cluster.advance_to(now).map_err(|e| e.to_string())?;
    let cores = rng.gen_range(1..=scenario.total());
    let estimate = cluster.estimate_wait(cores).map_err(|e| e.to_string())?;
    cluster.submit("probe", cores, 1.0).map_err(|e| e.to_string())?;
    while cluster.job("probe").unwrap().start_s.is_none() {
        let t = cluster.next_event_time().ok_or("probe never started")?;
        cluster.advance_to(t).map_err(|e| e.to_string())?;
    }
    let observed = cluster.job("probe").unwrap().start_s.unwrap() - now;
    let mut jobs: Vec<(f64, u32, f64)> = scenario.load.iter().map(|j| (j.arrival_s, j.cores, j.runtime_s)).collect();
    jobs.push((now, cores, 1.0));
    let oracle = fcfs_starts(scenario.total(), &jobs)[jobs.len() - 1] - now;
    Ok(EstimateCheck { estimate, observed, oracle })
}
