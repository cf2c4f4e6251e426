#![allow(dead_code)]

pub mod bridge_flow;
pub mod gen;
pub mod sched_oracle;
pub mod sim_check;
pub mod state_seq;
