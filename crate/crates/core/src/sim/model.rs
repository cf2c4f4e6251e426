use serde::{Deserialize, Serialize};

/// How long a request waits in a resource's batch queue before the FCFS
/// scheduler sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum QueueTimeModel {
    /// Every request is delayed by the same amount.
    Constant { delay_s: f64 },
    /// Delay picked by request size: the first row whose `max_cores` covers
    /// the request, or the last row for anything larger.
    Table { rows: Vec<TableRow> },
    /// No fixed delay; the wait comes entirely from simulator backlog.
    #[default]
    Backlog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub max_cores: u32,
    pub delay_s: f64,
}


impl QueueTimeModel {
    pub fn constant(delay_s: f64) -> Self {
        QueueTimeModel::Constant { delay_s }
    }

    pub fn delay_for(&self, cores: u32) -> f64 {
        match self {
            QueueTimeModel::Constant { delay_s } => *delay_s,
            QueueTimeModel::Table { rows } => rows
                .iter()
                .find(|r| cores <= r.max_cores)
                .or(rows.last())
                .map_or(0.0, |r| r.delay_s),
            QueueTimeModel::Backlog => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |d: f64| d.is_finite() && d >= 0.0;
        match self {
            QueueTimeModel::Constant { delay_s } if !ok(*delay_s) => {
                Err(format!("constant delay {delay_s} must be a non-negative number"))
            }
            QueueTimeModel::Table { rows } => {
                if rows.is_empty() {
                    return Err("delay table has no rows".into());
                }
                if let Some(r) = rows.iter().find(|r| !ok(r.delay_s)) {
                    return Err(format!("table delay {} must be a non-negative number", r.delay_s));
                }
                if rows.windows(2).any(|w| w[0].max_cores >= w[1].max_cores) {
                    return Err("table rows must have increasing max_cores".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
