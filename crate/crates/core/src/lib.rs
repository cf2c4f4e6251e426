//! Layered workflow middleware.
//!
//! Four independently usable blocks coordinated through one entity
//! state/event/error model:
//!
//! * [`workflow`]: pipelines of stages of tasks, the ready frontier, DAG
//!   import and runtime adaptivity.
//! * [`wlm`]: resource selection, workload partitioning, pilot sizing and
//!   late binding.
//! * [`pilot`]: pilots as resource containers, slot scheduling and isolated
//!   unit execution.
//! * [`access`]: one job interface over a local process backend and a
//!   simulated batch cluster ([`sim`]).
//!
//! [`state`] holds the shared registry and trace format, [`checks`] the
//! cross-entity trace checks and [`clock`] the real and virtual clocks.
//! [`bridge`] exposes tasks and pilots to other systems through a file
//! exchange format and an HTTP service. [`cli`] is the `strata` binary.

pub mod access;
pub mod bridge;
pub mod checks;
pub mod cli;
pub mod clock;
pub mod pilot;
pub mod sim;
pub mod state;
pub mod wlm;
pub mod workflow;
