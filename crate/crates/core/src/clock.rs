//! Time sources shared by every block.
//!
//! All timestamps are nanoseconds relative to a clock epoch. A [`SystemClock`]
//! follows the host monotonic clock; a [`VirtualClock`] only moves when a
//! driver asks it to jump to the next known deadline, which is how simulated
//! runs finish instantly and deterministically.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime};

use thiserror::Error;

const NANOS_PER_SEC: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    Real,
    Virtual,
}

/// A virtual clock was asked to wait with nothing left that could wake it.
#[derive(Debug, Error)]
#[error("virtual clock stalled at {at_ns} ns: no pending deadline")]
pub struct Stalled {
    pub at_ns: u64,
}

pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ns(&self) -> u64;

    fn mode(&self) -> TimeMode;

    /// Wall-clock time at the epoch, kept for reporting only.
    fn wall_epoch(&self) -> SystemTime;

    /// Let time pass toward `deadline`.
    ///
    /// A real clock sleeps for at most one poll interval; a virtual clock jumps
    /// straight to the deadline and fails when there is none.
    fn wait(&self, deadline: Option<u64>) -> Result<(), Stalled>;

    fn is_virtual(&self) -> bool {
        self.mode() == TimeMode::Virtual
    }
}

#[derive(Debug)]
pub struct SystemClock {
    epoch: Instant,
    wall: SystemTime,
    poll_interval: Duration,
}

impl SystemClock {
    pub fn new() -> Self {
        Self::with_poll_interval(Duration::from_millis(5))
    }

    pub fn with_poll_interval(poll_interval: Duration) -> Self {
        Self {
            epoch: Instant::now(),
            wall: SystemTime::now(),
            poll_interval,
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    fn mode(&self) -> TimeMode {
        TimeMode::Real
    }

    fn wall_epoch(&self) -> SystemTime {
        self.wall
    }

    fn wait(&self, deadline: Option<u64>) -> Result<(), Stalled> {
        let mut nap = self.poll_interval;
        if let Some(deadline) = deadline {
            let now = self.now_ns();
            nap = nap.min(Duration::from_nanos(deadline.saturating_sub(now)));
        }
        if !nap.is_zero() {
            std::thread::sleep(nap);
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct VirtualClock {
    now: AtomicU64,
    wall: SystemTime,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self {
            now: AtomicU64::new(0),
            wall: SystemTime::now(),
        }
    }

    /// Move forward to `ns`; earlier values are ignored.
    pub fn set(&self, ns: u64) {
        self.now.fetch_max(ns, Ordering::SeqCst);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn mode(&self) -> TimeMode {
        TimeMode::Virtual
    }

    fn wall_epoch(&self) -> SystemTime {
        self.wall
    }

    fn wait(&self, deadline: Option<u64>) -> Result<(), Stalled> {
        match deadline {
            Some(d) => {
                self.set(d);
                Ok(())
            }
            None => Err(Stalled { at_ns: self.now_ns() }),
        }
    }
}

pub fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / NANOS_PER_SEC
}

/// Smallest nanosecond count whose value in seconds is not below `secs`.
pub fn secs_to_ns_ceil(secs: f64) -> u64 {
    if secs <= 0.0 || !secs.is_finite() {
        return if secs.is_infinite() && secs > 0.0 { u64::MAX } else { 0 };
    }
    let mut ns = (secs * NANOS_PER_SEC).ceil() as u64;
    while ns_to_secs(ns) < secs {
        ns += 1;
    }
    ns
}

pub fn secs_to_ns(secs: f64) -> u64 {
    (secs.max(0.0) * NANOS_PER_SEC).round() as u64
}
