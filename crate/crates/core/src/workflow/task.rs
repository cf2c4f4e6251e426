use std::collections::BTreeMap;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

pub const DEFAULT_EXPECTED_DURATION_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    #[default]
    Serial,
    Mpi,
    Openmp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StagingAction {
    #[default]
    Copy,
    Link,
    Move,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagingDirective {
    pub source: String,
    /// Relative to the task sandbox.
    pub target: String,
    #[serde(default)]
    pub action: StagingAction,
}

impl StagingDirective {
    pub fn validate(&self) -> Result<(), String> {
        if self.source.is_empty() {
            return Err("staging source is empty".into());
        }
        check_relative(&self.target)
    }
}

/// A relative path that stays below its base: no root, no `..`, not empty.
pub fn check_relative(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("staging target is empty".into());
    }
    if path.starts_with('/') {
        return Err(format!("staging target `{path}` must be relative"));
    }
    for c in Path::new(path).components() {
        match c {
            Component::Normal(_) | Component::CurDir => {}
            _ => return Err(format!("staging target `{path}` escapes the sandbox")),
        }
    }
    Ok(())
}

fn one() -> u32 {
    1
}

fn default_duration() -> f64 {
    DEFAULT_EXPECTED_DURATION_S
}

/// One executable invocation and what it needs to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescription {
    pub uid: String,
    pub executable: String,
    #[serde(default)]
    pub arguments: Vec<String>,
    #[serde(default)]
    pub parallelism: Parallelism,
    /// Processes (mpi) or threads (openmp); exactly one for serial tasks.
    #[serde(default = "one")]
    pub cpu_count: u32,
    #[serde(default)]
    pub gpu_count: u32,
    #[serde(default)]
    pub memory_mb: u64,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    #[serde(default)]
    pub input_staging: Vec<StagingDirective>,
    #[serde(default)]
    pub output_staging: Vec<StagingDirective>,
    /// Runtime hint used to size pilot walltimes; also the simulated runtime.
    #[serde(default = "default_duration")]
    pub expected_duration_s: f64,
}

impl TaskDescription {
    pub fn new(uid: &str, executable: &str) -> Self {
        Self {
            uid: uid.to_string(),
            executable: executable.to_string(),
            arguments: Vec::new(),
            parallelism: Parallelism::Serial,
            cpu_count: 1,
            gpu_count: 0,
            memory_mb: 0,
            environment: BTreeMap::new(),
            input_staging: Vec::new(),
            output_staging: Vec::new(),
            expected_duration_s: DEFAULT_EXPECTED_DURATION_S,
        }
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.arguments = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn cores(mut self, cpu_count: u32, parallelism: Parallelism) -> Self {
        self.cpu_count = cpu_count;
        self.parallelism = parallelism;
        self
    }

    pub fn gpus(mut self, gpu_count: u32) -> Self {
        self.gpu_count = gpu_count;
        self
    }

    pub fn duration(mut self, secs: f64) -> Self {
        self.expected_duration_s = secs;
        self
    }

    pub fn env(mut self, key: &str, value: &str) -> Self {
        self.environment.insert(key.to_string(), value.to_string());
        self
    }

    /// Problems with the description's fields, empty when valid. The uid is
    /// checked separately since its rules come from the state registry.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.executable.trim().is_empty() {
            out.push("executable is empty".into());
        }
        if self.cpu_count == 0 {
            out.push("cpu_count must be at least 1".into());
        }
        if self.parallelism == Parallelism::Serial && self.cpu_count > 1 {
            out.push(format!("serial task requests {} cores", self.cpu_count));
        }
        if !(self.expected_duration_s.is_finite() && self.expected_duration_s > 0.0) {
            out.push(format!(
                "expected_duration_s {} must be a positive number",
                self.expected_duration_s
            ));
        }
        for d in self.input_staging.iter().chain(&self.output_staging) {
            if let Err(e) = d.validate() {
                out.push(e);
            }
        }
        out
    }

    /// Core-seconds of work the task is expected to need.
    pub fn work(&self) -> f64 {
        self.expected_duration_s * f64::from(self.cpu_count)
    }
}
