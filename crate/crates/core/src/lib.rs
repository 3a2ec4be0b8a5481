//! Deterministic discrete-event simulator of a flash-integrated low-power
//! accelerator: multi-kernel scheduling over a pool of lightweight processors,
//! flash virtualization with range locking, background storage management, and
//! the performance/energy evaluation machinery built on top of the event
//! timeline.

pub mod cli;
pub mod flashvisor;
pub mod metrics;
pub mod sched;
pub mod simcore;
pub mod storengine;
pub mod trace;
pub mod units;
pub mod workload;

pub use simcore::{HardwareParams, Mode, SimulationReport};
pub use workload::WorkloadMix;
