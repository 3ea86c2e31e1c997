//! Fault injection orchestration for HPC-style clusters.
//!
//! Engines run as daemons on target nodes and execute benchmark and
//! fault-triggering tasks on command. A controller replays a CSV workload
//! against one or more engines and records one execution log per host.
//! The [`wlgen`] module synthesizes workloads from statistical recipes.

pub mod cli;
pub mod controller;
pub mod engine;
pub mod faultlib;
pub mod model;
pub mod netproto;
pub mod storage;
pub mod wlgen;

pub use model::{
    format_core_list, parse_core_list, validate_workload, CoreSet, EventType, HarnessConfig,
    Message, MessageKind, Payload, SessionEvent, Task, TaskEcho,
};
pub use netproto::PeerId;

/// Current wall-clock time in whole epoch seconds.
pub fn epoch_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
pub(crate) mod testutil;
