use std::collections::BTreeSet;

use super::{AccessError, Backend, BackendKind, JobDescription, JobUpdate, QueueInfo};
use crate::clock::{ns_to_secs, secs_to_ns_ceil};
use crate::sim::{SimCluster, SimEventKind};
use crate::state::names::{CANCELED, DONE};

/// Jobs go through a simulated FCFS batch queue.
///
/// Simulated seconds are read off the registry clock, so under a virtual
/// clock the queue waits cost nothing and under a real clock they are felt.
#[derive(Debug)]
pub struct SimBatchBackend {
    cluster: SimCluster,
    ours: BTreeSet<String>,
    outbox: Vec<JobUpdate>,
}

impl SimBatchBackend {
    pub fn new(cluster: SimCluster) -> Self {
        Self {
            cluster,
            ours: BTreeSet::new(),
            outbox: Vec::new(),
        }
    }

    pub fn cluster(&self) -> &SimCluster {
        &self.cluster
    }

    fn catch_up(&mut self, now_ns: u64) {
        let t = ns_to_secs(now_ns).max(self.cluster.clock());
        let events = self.cluster.advance_to(t).expect("target never lies behind the cluster clock");
        for event in events {
            if !self.ours.contains(&event.job) {
                continue;
            }
            let at_ns = secs_to_ns_ceil(event.time);
            match event.kind {
                SimEventKind::JobStart => self.outbox.push(JobUpdate::Started {
                    uid: event.job.clone(),
                    at_ns,
                }),
                SimEventKind::JobEnd => self.outbox.push(JobUpdate::Finished {
                    uid: event.job.clone(),
                    at_ns,
                    state: DONE,
                    exit_code: Some(0),
                }),
                SimEventKind::JobArrival | SimEventKind::Cancel => {}
            }
        }
    }
}

impl Backend for SimBatchBackend {
    fn resource_id(&self) -> &str {
        self.cluster.resource_id()
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Simbatch
    }

    fn capacity(&self) -> (u32, u32) {
        (self.cluster.total_cores(), self.cluster.total_gpus())
    }

    fn submit(&mut self, uid: &str, description: &JobDescription, now_ns: u64) -> Result<(), AccessError> {
        self.catch_up(now_ns);
        self.cluster.submit(uid, description.cores, description.simulated_runtime_s())?;
        self.ours.insert(uid.to_string());
        // A zero-delay request may start right away.
        self.catch_up(now_ns);
        Ok(())
    }

    fn poll(&mut self, now_ns: u64) -> Vec<JobUpdate> {
        self.catch_up(now_ns);
        std::mem::take(&mut self.outbox)
    }

    fn cancel(&mut self, uid: &str, now_ns: u64) -> Result<JobUpdate, AccessError> {
        self.catch_up(now_ns);
        self.cluster.cancel(uid).map_err(|e| match e {
            crate::sim::SimError::AlreadyFinal(u) => AccessError::AlreadyFinal(u),
            other => other.into(),
        })?;
        Ok(JobUpdate::Finished {
            uid: uid.to_string(),
            at_ns: secs_to_ns_ceil(self.cluster.clock()),
            state: CANCELED,
            exit_code: None,
        })
    }

    fn queue_info(&mut self, cores: u32, now_ns: u64) -> Result<QueueInfo, AccessError> {
        self.catch_up(now_ns);
        Ok(QueueInfo {
            resource_id: self.cluster.resource_id().to_string(),
            pending_jobs: self.cluster.pending_jobs(),
            running_jobs: self.cluster.running_jobs(),
            estimated_wait_s: self.cluster.projected_wait(cores)?,
        })
    }

    fn next_deadline(&self) -> Option<u64> {
        self.cluster.next_event_time().map(secs_to_ns_ceil)
    }
}
