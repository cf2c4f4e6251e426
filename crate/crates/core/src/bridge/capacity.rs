use serde::Serialize;

use crate::pilot::PilotInfo;
use crate::state::names::ACTIVE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PilotCapacity {
    pub uid: String,
    pub resource_id: String,
    pub state: String,
    pub cores: u32,
    pub free_cores: u32,
    pub gpus: u32,
    pub free_gpus: u32,
    pub expires_ns: Option<u64>,
}

/// Pilots seen as one resource queue. Totals cover ACTIVE pilots only; the
/// breakdown lists every pilot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CapacitySummary {
    pub total_cores: u32,
    pub free_cores: u32,
    pub total_gpus: u32,
    pub free_gpus: u32,
    pub earliest_expiry: Option<u64>,
    pub pilots: Vec<PilotCapacity>,
}

pub fn aggregate_capacity(pilots: &[PilotInfo]) -> CapacitySummary {
    let mut summary = CapacitySummary::default();
    for p in pilots {
        if p.state == ACTIVE {
            summary.total_cores += p.cores;
            summary.free_cores += p.free_cores;
            summary.total_gpus += p.gpus;
            summary.free_gpus += p.free_gpus;
            summary.earliest_expiry = match (summary.earliest_expiry, p.expires_ns) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
        summary.pilots.push(PilotCapacity {
            uid: p.uid.clone(),
            resource_id: p.resource_id.clone(),
            state: p.state.clone(),
            cores: p.cores,
            free_cores: p.free_cores,
            gpus: p.gpus,
            free_gpus: p.free_gpus,
            expires_ns: p.expires_ns,
        });
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::names::SUBMITTED;

    fn info(uid: &str, state: &str, cores: u32, busy: u32, expires: u64) -> PilotInfo {
        PilotInfo {
            uid: uid.into(),
            resource_id: "r".into(),
            state: state.into(),
            cores,
            gpus: 0,
            free_cores: cores - busy,
            free_gpus: 0,
            walltime_s: 60.0,
            activated_ns: Some(1),
            expires_ns: Some(expires),
            job_uid: None,
            units: busy as usize,
        }
    }

    #[test]
    fn sums_active_pilots_only() {
        assert_eq!(aggregate_capacity(&[]), CapacitySummary::default());
        let s = aggregate_capacity(&[info("a", ACTIVE, 4, 1, 90), info("b", ACTIVE, 8, 2, 50)]);
        assert_eq!((s.total_cores, s.free_cores, s.earliest_expiry), (12, 9, Some(50)));
        let s = aggregate_capacity(&[info("a", ACTIVE, 4, 1, 90), info("b", SUBMITTED, 8, 0, 10)]);
        assert_eq!((s.total_cores, s.free_cores, s.earliest_expiry), (4, 3, Some(90)));
        assert_eq!(s.pilots.len(), 2);
    }
}
