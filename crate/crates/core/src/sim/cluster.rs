use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::model::QueueTimeModel;
use super::SimError;
use crate::clock::secs_to_ns_ceil;
use crate::state::{RecordType, TraceLine};

const PROBE_UID: &str = "\u{0}probe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    JobArrival,
    JobStart,
    JobEnd,
    Cancel,
}

impl SimEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimEventKind::JobArrival => "job_arrival",
            SimEventKind::JobStart => "job_start",
            SimEventKind::JobEnd => "job_end",
            SimEventKind::Cancel => "cancel",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: SimEventKind,
    pub job: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SimJobStatus {
    /// Submitted, still inside its modeled queue delay.
    Waiting,
    /// Visible to the FCFS scheduler, not started.
    Queued,
    Running,
    Done,
    Canceled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimJob {
    pub uid: String,
    pub cores: u32,
    pub runtime_s: f64,
    pub submit_s: f64,
    pub arrival_s: f64,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
    pub status: SimJobStatus,
    pub background: bool,
}

impl SimJob {
    pub fn is_final(&self) -> bool {
        matches!(self.status, SimJobStatus::Done | SimJobStatus::Canceled)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    time: f64,
    seq: u64,
    kind: SimEventKind,
    job: String,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

/// Background job entry: arrives directly in the FCFS queue at `arrival_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundJob {
    pub arrival_s: f64,
    pub cores: u32,
    pub runtime_s: f64,
}

/// Discrete-event model of one batch-scheduled resource.
///
/// Jobs occupy whole cores. The scheduler is strict FCFS: the head of the
/// queue starts as soon as enough cores are free and nothing behind it may
/// jump ahead. Simultaneous events are processed in insertion order.
#[derive(Debug, Clone)]
pub struct SimCluster {
    resource_id: String,
    nodes: u32,
    cores_per_node: u32,
    gpus_per_node: u32,
    model: QueueTimeModel,
    clock: f64,
    seq: u64,
    background_seq: u64,
    events: BinaryHeap<Reverse<Pending>>,
    queue: VecDeque<String>,
    jobs: BTreeMap<String, SimJob>,
    used_cores: u32,
    log: Vec<SimEvent>,
}

impl SimCluster {
    pub fn new(resource_id: &str, nodes: u32, cores_per_node: u32, gpus_per_node: u32, model: QueueTimeModel) -> Self {
        Self {
            resource_id: resource_id.to_string(),
            nodes,
            cores_per_node,
            gpus_per_node,
            model,
            clock: 0.0,
            seq: 0,
            background_seq: 0,
            events: BinaryHeap::new(),
            queue: VecDeque::new(),
            jobs: BTreeMap::new(),
            used_cores: 0,
            log: Vec::new(),
        }
    }

    pub fn resource_id(&self) -> &str {
        &self.resource_id
    }

    pub fn model(&self) -> &QueueTimeModel {
        &self.model
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn total_cores(&self) -> u32 {
        self.nodes * self.cores_per_node
    }

    pub fn total_gpus(&self) -> u32 {
        self.nodes * self.gpus_per_node
    }

    pub fn free_cores(&self) -> u32 {
        self.total_cores() - self.used_cores
    }

    pub fn used_cores(&self) -> u32 {
        self.used_cores
    }

    pub fn job(&self, uid: &str) -> Option<&SimJob> {
        self.jobs.get(uid)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &SimJob> {
        self.jobs.values()
    }

    /// Jobs submitted or arrived but not started. Background jobs whose
    /// arrival lies in the future are not counted.
    pub fn pending_jobs(&self) -> usize {
        self.jobs
            .values()
            .filter(|j| match j.status {
                SimJobStatus::Queued => true,
                SimJobStatus::Waiting => !j.background,
                _ => false,
            })
            .count()
    }

    pub fn running_jobs(&self) -> usize {
        self.jobs.values().filter(|j| j.status == SimJobStatus::Running).count()
    }

    pub fn log(&self) -> &[SimEvent] {
        &self.log
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.events.peek().map(|Reverse(p)| p.time)
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn schedule(&mut self, time: f64, kind: SimEventKind, job: &str) {
        let seq = self.next_seq();
        self.events.push(Reverse(Pending {
            time,
            seq,
            kind,
            job: job.to_string(),
        }));
    }

    fn emit(&mut self, kind: SimEventKind, job: &str) {
        let seq = self.next_seq();
        self.log.push(SimEvent {
            time: self.clock,
            seq,
            kind,
            job: job.to_string(),
        });
    }

    fn check_request(&self, cores: u32) -> Result<(), SimError> {
        if cores == 0 || cores > self.total_cores() {
            return Err(SimError::RequestExceedsCapacity {
                resource: self.resource_id.clone(),
                requested: cores,
                capacity: self.total_cores(),
            });
        }
        Ok(())
    }

    /// Submit a job now. It reaches the FCFS queue after the modeled delay.
    pub fn submit(&mut self, uid: &str, cores: u32, runtime_s: f64) -> Result<(), SimError> {
        self.check_request(cores)?;
        if self.jobs.contains_key(uid) {
            return Err(SimError::DuplicateJob(uid.to_string()));
        }
        let arrival = self.clock + self.model.delay_for(cores);
        self.insert_job(uid, cores, runtime_s, arrival, false);
        Ok(())
    }

    fn insert_job(&mut self, uid: &str, cores: u32, runtime_s: f64, arrival_s: f64, background: bool) {
        self.jobs.insert(
            uid.to_string(),
            SimJob {
                uid: uid.to_string(),
                cores,
                runtime_s: runtime_s.max(0.0),
                submit_s: self.clock,
                arrival_s,
                start_s: None,
                end_s: None,
                status: SimJobStatus::Waiting,
                background,
            },
        );
        self.schedule(arrival_s, SimEventKind::JobArrival, uid);
    }

    /// Queue future arrivals of competing work. All entries are checked
    /// before any is enqueued.
    pub fn inject_background_load(&mut self, load: &[BackgroundJob]) -> Result<Vec<String>, SimError> {
        for entry in load {
            self.check_request(entry.cores)?;
            if entry.arrival_s < self.clock || !entry.arrival_s.is_finite() {
                return Err(SimError::ArrivalInPast {
                    arrival_s: entry.arrival_s,
                    clock_s: self.clock,
                });
            }
        }
        let mut uids = Vec::with_capacity(load.len());
        for entry in load {
            self.background_seq += 1;
            let uid = format!("bg.{:06}", self.background_seq);
            self.insert_job(&uid, entry.cores, entry.runtime_s, entry.arrival_s, true);
            uids.push(uid);
        }
        Ok(uids)
    }

    pub fn advance_to(&mut self, t: f64) -> Result<Vec<SimEvent>, SimError> {
        if t < self.clock {
            return Err(SimError::ClockRegression { now: self.clock, requested: t });
        }
        let first = self.log.len();
        while self.events.peek().is_some_and(|Reverse(p)| p.time <= t) {
            let Reverse(event) = self.events.pop().unwrap();
            self.clock = event.time;
            self.process(event);
        }
        self.clock = t;
        Ok(self.log[first..].to_vec())
    }

    fn process(&mut self, event: Pending) {
        let Some(job) = self.jobs.get_mut(&event.job) else {
            return;
        };
        match event.kind {
            SimEventKind::JobArrival if job.status == SimJobStatus::Waiting => {
                job.status = SimJobStatus::Queued;
                self.queue.push_back(event.job.clone());
                self.emit(SimEventKind::JobArrival, &event.job);
                self.start_ready();
            }
            SimEventKind::JobEnd
                if job.status == SimJobStatus::Running && job.end_s == Some(event.time) =>
            {
                job.status = SimJobStatus::Done;
                self.used_cores -= job.cores;
                self.emit(SimEventKind::JobEnd, &event.job);
                self.start_ready();
            }
            // Stale entry for a job that was canceled in the meantime.
            _ => {}
        }
    }

    fn start_ready(&mut self) {
        while let Some(head) = self.queue.front() {
            let cores = self.jobs[head].cores;
            if cores > self.free_cores() {
                break;
            }
            let uid = self.queue.pop_front().unwrap();
            let now = self.clock;
            let job = self.jobs.get_mut(&uid).unwrap();
            job.status = SimJobStatus::Running;
            job.start_s = Some(now);
            let end = now + job.runtime_s;
            job.end_s = Some(end);
            self.used_cores += cores;
            self.emit(SimEventKind::JobStart, &uid);
            self.schedule(end, SimEventKind::JobEnd, &uid);
        }
    }

    pub fn cancel(&mut self, uid: &str) -> Result<(), SimError> {
        let now = self.clock;
        let job = self.jobs.get_mut(uid).ok_or_else(|| SimError::UnknownJob(uid.to_string()))?;
        match job.status {
            SimJobStatus::Done | SimJobStatus::Canceled => {
                return Err(SimError::AlreadyFinal(uid.to_string()));
            }
            SimJobStatus::Waiting => job.status = SimJobStatus::Canceled,
            SimJobStatus::Queued => {
                job.status = SimJobStatus::Canceled;
                self.queue.retain(|q| q != uid);
            }
            SimJobStatus::Running => {
                job.status = SimJobStatus::Canceled;
                job.end_s = Some(now);
                self.used_cores -= job.cores;
            }
        }
        self.emit(SimEventKind::Cancel, uid);
        self.start_ready();
        Ok(())
    }

    /// Modeled wait for a request of `cores`.
    ///
    /// Constant and table models return their delay. The backlog model
    /// returns the time until the request would start under FCFS behind the
    /// current queue, assuming nothing else arrives.
    pub fn estimate_wait(&self, cores: u32) -> Result<f64, SimError> {
        self.check_request(cores)?;
        match self.model {
            QueueTimeModel::Backlog => self.replay_wait(cores),
            _ => Ok(self.model.delay_for(cores)),
        }
    }

    /// Modeled delay plus backlog: the wait a request submitted now would see
    /// if no further background work arrived.
    pub fn projected_wait(&self, cores: u32) -> Result<f64, SimError> {
        self.check_request(cores)?;
        self.replay_wait(cores)
    }

    fn replay_wait(&self, cores: u32) -> Result<f64, SimError> {
        let mut probe = self.clone();
        let future: Vec<String> = probe
            .jobs
            .values()
            .filter(|j| j.background && j.status == SimJobStatus::Waiting)
            .map(|j| j.uid.clone())
            .collect();
        for uid in future {
            probe.jobs.remove(&uid);
        }
        probe.submit(PROBE_UID, cores, 0.0)?;
        loop {
            if let Some(start) = probe.jobs[PROBE_UID].start_s {
                return Ok(start - self.clock);
            }
            let next = probe
                .next_event_time()
                .expect("a request within capacity always starts once the machine drains");
            probe.advance_to(next)?;
        }
    }

    /// Write the event log in the trace line format, flagged as virtual time.
    pub fn export_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in &self.log {
            let line = TraceLine {
                uid: event.job.clone(),
                kind: "sim_job".into(),
                record: RecordType::Event,
                name: event.kind.as_str().into(),
                ts_ns: secs_to_ns_ceil(event.time),
                virtual_time: true,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}
