//! Deterministic simulator of the Xen Credit scheduler, tick-dodging
//! theft-of-service workloads, and theft-resistant charging variants.

pub mod harness;
pub mod machine;
pub mod metrics;
pub mod sched;
pub mod sim;
pub mod workload;
