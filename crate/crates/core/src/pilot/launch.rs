use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use crate::access::local::terminate;
use crate::clock::secs_to_ns_ceil;
use crate::state::SlotIds;
use crate::workflow::{Parallelism, TaskDescription};

/// Variables passed through from the host to every unit.
pub const BASE_ENV_VARS: &[&str] = &["PATH", "HOME", "LANG", "TMPDIR", "USER"];

/// The subset of the host environment every unit starts from.
pub fn base_environment() -> BTreeMap<String, String> {
    BASE_ENV_VARS
        .iter()
        .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_string(), v)))
        .collect()
}

pub struct LaunchSpec<'a> {
    pub task: &'a TaskDescription,
    pub sandbox: &'a Path,
    pub slots: &'a SlotIds,
    pub base_env: &'a BTreeMap<String, String>,
    pub now_ns: u64,
}

impl LaunchSpec<'_> {
    /// Base environment, then the task's own variables, then the variables
    /// the parallelism kind requires.
    pub fn environment(&self) -> BTreeMap<String, String> {
        let mut env = self.base_env.clone();
        env.extend(self.task.environment.iter().map(|(k, v)| (k.clone(), v.clone())));
        if self.task.parallelism == Parallelism::Openmp {
            env.insert("OMP_NUM_THREADS".into(), self.task.cpu_count.to_string());
        }
        if !self.slots.gpu.is_empty() {
            let ids: Vec<String> = self.slots.gpu.iter().map(usize::to_string).collect();
            env.insert("CUDA_VISIBLE_DEVICES".into(), ids.join(","));
        }
        env
    }
}

/// A running unit.
pub trait Execution: Send + fmt::Debug {
    /// Exit code once finished.
    fn poll(&mut self, now_ns: u64) -> Option<i32>;

    /// When the execution is known to finish, if it is.
    fn deadline(&self) -> Option<u64>;

    fn terminate(&mut self);
}

pub trait Launcher: Send + Sync + fmt::Debug {
    fn launch(&self, spec: &LaunchSpec<'_>) -> Result<Box<dyn Execution>, String>;
}

/// How mpi units get their ranks.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum MpiLaunch {
    /// Start `cpu_count` copies with `PMI_RANK` and `PMI_SIZE` set.
    #[default]
    Ranks,
    /// Prefix the command with a launcher such as `mpirun -np {np}`.
    Wrapper { program: String, args: Vec<String> },
}

/// Spawns real processes with stdout and stderr captured in the sandbox.
#[derive(Debug, Clone)]
pub struct ProcessLauncher {
    pub mpi: MpiLaunch,
    pub grace: Duration,
}

impl Default for ProcessLauncher {
    fn default() -> Self {
        Self {
            mpi: MpiLaunch::Ranks,
            grace: crate::access::local::CANCEL_GRACE,
        }
    }
}

#[derive(Debug)]
struct Processes {
    children: Vec<Child>,
    codes: Vec<Option<i32>>,
    grace: Duration,
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

impl Execution for Processes {
    fn poll(&mut self, _now_ns: u64) -> Option<i32> {
        for (child, code) in self.children.iter_mut().zip(self.codes.iter_mut()) {
            if code.is_none() {
                match child.try_wait() {
                    Ok(Some(status)) => *code = Some(exit_code(status)),
                    Ok(None) => {}
                    Err(_) => *code = Some(-1),
                }
            }
        }
        let codes: Option<Vec<i32>> = self.codes.iter().copied().collect();
        codes.map(|c| c.into_iter().find(|&x| x != 0).unwrap_or(0))
    }

    fn deadline(&self) -> Option<u64> {
        None
    }

    fn terminate(&mut self) {
        for child in &mut self.children {
            terminate(child, self.grace);
        }
    }
}

impl Drop for Processes {
    fn drop(&mut self) {
        for child in &mut self.children {
            if let Ok(None) = child.try_wait() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn capture(path: &Path) -> Result<File, String> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| format!("{}: {e}", path.display()))
}

impl ProcessLauncher {
    fn command(&self, spec: &LaunchSpec<'_>, env: &BTreeMap<String, String>) -> Result<Command, String> {
        let (program, args): (&str, Vec<String>) = match (&spec.task.parallelism, &self.mpi) {
            (Parallelism::Mpi, MpiLaunch::Wrapper { program, args }) => {
                let np = spec.task.cpu_count.to_string();
                let mut all: Vec<String> = args.iter().map(|a| a.replace("{np}", &np)).collect();
                all.push(spec.task.executable.clone());
                all.extend(spec.task.arguments.iter().cloned());
                (program, all)
            }
            _ => (&spec.task.executable, spec.task.arguments.clone()),
        };
        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(spec.sandbox)
            .env_clear()
            .envs(env)
            .stdin(Stdio::null())
            .stdout(capture(&spec.sandbox.join("stdout"))?)
            .stderr(capture(&spec.sandbox.join("stderr"))?);
        Ok(cmd)
    }
}

impl Launcher for ProcessLauncher {
    fn launch(&self, spec: &LaunchSpec<'_>) -> Result<Box<dyn Execution>, String> {
        let env = spec.environment();
        let rank_vars = spec.task.parallelism == Parallelism::Mpi && self.mpi == MpiLaunch::Ranks;
        let ranks = if rank_vars { spec.task.cpu_count.max(1) } else { 1 };
        let mut children = Vec::with_capacity(ranks as usize);
        for rank in 0..ranks {
            let mut cmd = self.command(spec, &env)?;
            if rank_vars {
                cmd.env("PMI_RANK", rank.to_string()).env("PMI_SIZE", ranks.to_string());
            }
            match cmd.spawn() {
                Ok(child) => children.push(child),
                Err(e) => {
                    for mut c in children {
                        let _ = c.kill();
                        let _ = c.wait();
                    }
                    return Err(format!("cannot start `{}`: {e}", spec.task.executable));
                }
            }
        }
        let n = children.len();
        Ok(Box::new(Processes {
            children,
            codes: vec![None; n],
            grace: self.grace,
        }))
    }
}

/// Resolve a program the way the shell would, against `PATH` from `env`.
pub fn resolve_executable(executable: &str, env: &BTreeMap<String, String>, cwd: &Path) -> Option<PathBuf> {
    use std::os::unix::fs::PermissionsExt;
    let runnable = |p: &Path| p.metadata().is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0);
    if executable.contains('/') {
        let p = cwd.join(executable);
        return runnable(&p).then_some(p);
    }
    env.get("PATH")?
        .split(':')
        .map(|dir| Path::new(dir).join(executable))
        .find(|p| runnable(p))
}

/// Stands in for process execution under virtual time: a unit runs for
/// exactly its expected duration and exits 0. Missing executables still fail
/// to spawn.
#[derive(Debug, Clone, Default)]
pub struct SimulatedLauncher;

#[derive(Debug)]
struct Simulated {
    end_ns: u64,
    terminated: bool,
}

impl Execution for Simulated {
    fn poll(&mut self, now_ns: u64) -> Option<i32> {
        if self.terminated {
            return Some(143);
        }
        (now_ns >= self.end_ns).then_some(0)
    }

    fn deadline(&self) -> Option<u64> {
        Some(self.end_ns)
    }

    fn terminate(&mut self) {
        self.terminated = true;
    }
}

impl Launcher for SimulatedLauncher {
    fn launch(&self, spec: &LaunchSpec<'_>) -> Result<Box<dyn Execution>, String> {
        let env = spec.environment();
        if resolve_executable(&spec.task.executable, &env, spec.sandbox).is_none() {
            return Err(format!("cannot start `{}`: not found", spec.task.executable));
        }
        capture(&spec.sandbox.join("stdout"))?;
        capture(&spec.sandbox.join("stderr"))?;
        Ok(Box::new(Simulated {
            end_ns: spec.now_ns + secs_to_ns_ceil(spec.task.expected_duration_s),
            terminated: false,
        }))
    }
}
