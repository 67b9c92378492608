//! Virtual-time event engine and random-variate generation.

mod queue;
mod rng;
mod time;

pub use queue::{run_until, Event, EventHandle, EventKind, EventQueue, PcpuId, VcpuId};
pub use rng::{
    geometric_from_uniform, sample_geometric_slots, sample_trunc_exp, trunc_exp_from_uniform,
    trunc_exp_mean, SimRng,
};
pub use time::{Duration, VirtualTime};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} but clock is already at {now}")]
    ScheduleInPast { at: VirtualTime, now: VirtualTime },
    #[error("vcpu {0:?} blocked while already blocked")]
    BlockWhileBlocked(VcpuId),
    #[error("unknown vcpu {0:?}")]
    UnknownVcpu(VcpuId),
    #[error("invariant violated at {at}: {what}")]
    Invariant { at: VirtualTime, what: String },
}
