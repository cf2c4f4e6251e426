//! Structured event names.
//!
//! Cross-entity relations (which stage a task belongs to, which pilot it was
//! bound to, which slots it held) travel through the trace as event names so
//! that trace checks can be run on an exported file alone.

use std::fmt;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotIds {
    pub cpu: Vec<usize>,
    pub gpu: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    /// Task belongs to stage `stage` (0-based) of `pipeline`.
    Member { pipeline: String, stage: usize },
    /// Task was bound to `pilot`.
    Bind { pilot: String },
    /// Unit was given these pilot slots.
    Slots(SlotIds),
    /// Pilot capacity at activation.
    Capacity { cpu: u32, gpu: u32 },
    /// Pilot runs inside this L1 job.
    Job { job: String },
    /// Pilot walltime.
    Walltime { secs: f64 },
}

fn render_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_ids(text: &str) -> Option<Vec<usize>> {
    if text.is_empty() {
        return Some(Vec::new());
    }
    text.split(',').map(|s| s.parse().ok()).collect()
}

fn parse_pair<'a>(text: &'a str, a: &str, b: &str) -> Option<(&'a str, &'a str)> {
    let (left, right) = text.split_once(';')?;
    Some((left.strip_prefix(a)?.strip_prefix('=')?, right.strip_prefix(b)?.strip_prefix('=')?))
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotation::Member { pipeline, stage } => write!(f, "member:{pipeline}/{stage}"),
            Annotation::Bind { pilot } => write!(f, "bind:{pilot}"),
            Annotation::Slots(ids) => {
                write!(f, "slots:cpu={};gpu={}", render_ids(&ids.cpu), render_ids(&ids.gpu))
            }
            Annotation::Capacity { cpu, gpu } => write!(f, "capacity:cpu={cpu};gpu={gpu}"),
            Annotation::Job { job } => write!(f, "job:{job}"),
            Annotation::Walltime { secs } => write!(f, "walltime:{secs}"),
        }
    }
}

impl Annotation {
    pub fn parse(name: &str) -> Option<Self> {
        let (tag, body) = name.split_once(':')?;
        match tag {
            "member" => {
                let (pipeline, stage) = body.rsplit_once('/')?;
                Some(Annotation::Member {
                    pipeline: pipeline.to_string(),
                    stage: stage.parse().ok()?,
                })
            }
            "bind" => Some(Annotation::Bind { pilot: body.to_string() }),
            "slots" => {
                let (cpu, gpu) = parse_pair(body, "cpu", "gpu")?;
                Some(Annotation::Slots(SlotIds {
                    cpu: parse_ids(cpu)?,
                    gpu: parse_ids(gpu)?,
                }))
            }
            "capacity" => {
                let (cpu, gpu) = parse_pair(body, "cpu", "gpu")?;
                Some(Annotation::Capacity {
                    cpu: cpu.parse().ok()?,
                    gpu: gpu.parse().ok()?,
                })
            }
            "job" => Some(Annotation::Job { job: body.to_string() }),
            "walltime" => Some(Annotation::Walltime { secs: body.parse().ok()? }),
            _ => None,
        }
    }
}
