//! Deterministic discrete-event engine binding the workload, scheduler and
//! storage models, plus the baseline host+SSD+accelerator datapath.

mod engine;
mod event;
mod params;

pub use engine::{expand_instances, run, run_with, Instance, InstanceScreen};
pub use event::{BusyLedger, Component, EventKind, EventTimeline, Resource, TraceEvent};
pub use params::{HardwareParams, HostParams, ParamError, PowerParams, SchedParams};

use crate::flashvisor::FlashError;
use crate::sched::audit::DispatchRecord;
use crate::sched::{PolicyKind, ProtocolViolation};
use crate::units::{transfer_ps, Ps};
use crate::workload::WorkloadError;
use thiserror::Error;

/// Datapath selection: integrated flash virtualization, or the conventional
/// discrete-SSD path through the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Flashabacus,
    Baseline,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Flashabacus => "flashabacus",
            Mode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flashabacus" => Some(Mode::Flashabacus),
            "baseline" => Some(Mode::Baseline),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error("simulation deadlock: {0}")]
    Deadlock(String),
}

/// Per-kernel-instance outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRecord {
    pub app_id: u32,
    pub kernel_id: u32,
    pub instance: u32,
    /// Offload completion: when the kernel became schedulable.
    pub arrival: Ps,
    /// First screen dispatch.
    pub start: Ps,
    pub completion: Ps,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

impl KernelRecord {
    pub fn latency(&self) -> Ps {
        self.completion - self.arrival
    }
}

/// One reclaim performed by the storage manager.
#[derive(Debug, Clone, PartialEq)]
pub struct GcRecord {
    pub time: Ps,
    pub victim: u32,
    pub migrated_groups: u32,
    pub erase_count: u32,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub workload: String,
    pub classification: String,
    pub policy: PolicyKind,
    pub mode: Mode,
    pub seed: u64,
    pub workers: u32,
    pub params: Vec<(String, String)>,
    pub kernels: Vec<KernelRecord>,
    /// Merged busy intervals per component.
    pub busy: std::collections::BTreeMap<Component, Vec<(Ps, Ps)>>,
    pub first_arrival: Ps,
    pub last_completion: Ps,
    /// Quiescence time: last event, including background flush tails.
    pub end_time: Ps,
    pub processed_input_bytes: u64,
    pub processed_output_bytes: u64,
    pub events: Vec<TraceEvent>,
    pub dispatches: Vec<DispatchRecord>,
    pub gc_log: Vec<GcRecord>,
    /// Workload identity for report comparisons.
    pub workload_digest: u64,
}

impl SimulationReport {
    /// First offload arrival to last kernel completion.
    pub fn makespan(&self) -> Ps {
        self.last_completion.saturating_sub(self.first_arrival)
    }

    pub fn busy_total(&self, component: Component) -> Ps {
        self.busy
            .get(&component)
            .map(|iv| iv.iter().map(|(s, e)| e - s).sum())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IoKind {
    Read,
    Write,
}

/// Flash array plus link-transfer cost of one range on an idle backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoTime {
    pub array: Ps,
    pub transfer: Ps,
    pub total: Ps,
}

/// Timing of a page-group-aligned screen I/O against an idle backbone: per
/// group, the flash array time (groups stripe across all channels, die rows
/// pipeline) composed with the 64 KiB transfer over the SRIO/tier-2 link.
pub fn screen_io_time(params: &HardwareParams, bytes: u64, kind: IoKind) -> IoTime {
    let g = &params.geometry;
    let group = g.page_group_size();
    assert_eq!(bytes % group, 0, "range must be page-group aligned");
    let groups = bytes / group;
    if groups == 0 {
        return IoTime { array: 0, transfer: 0, total: 0 };
    }
    let array_t = match kind {
        IoKind::Read => g.read_latency,
        IoKind::Write => g.write_latency,
    };
    let xfer_t = transfer_ps(group, params.flash_link_bw());
    let lanes = g.array_lanes() as usize;
    let mut lane_free = vec![0u64; lanes];
    let mut link_free = 0u64;
    let mut total = 0u64;
    for i in 0..groups {
        let lane = (i % lanes as u64) as usize;
        match kind {
            IoKind::Read => {
                // Array first, then the link drains the group.
                let array_end = lane_free[lane] + array_t;
                lane_free[lane] = array_end;
                link_free = link_free.max(array_end) + xfer_t;
                total = link_free;
            }
            IoKind::Write => {
                // Link first, then the array programs the group.
                link_free += xfer_t;
                let array_end = lane_free[lane].max(link_free) + array_t;
                lane_free[lane] = array_end;
                total = total.max(array_end);
            }
        }
    }
    IoTime {
        array: array_t,
        transfer: xfer_t,
        total,
    }
}

/// Control-plane cost of offloading one kernel descriptor to a worker:
/// the PCIe transfer followed by the five control steps (interrupt forward,
/// sleep, boot-address write, inter-process interrupt, wake).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadPlan {
    pub transfer: Ps,
    pub control_steps: [Ps; 5],
    pub total: Ps,
}

pub fn offload_kernel(
    params: &HardwareParams,
    descriptor_bytes: u64,
    target_lwp: u32,
) -> Result<OffloadPlan, SimError> {
    let workers = params.workers();
    if target_lwp >= workers {
        return Err(SimError::InvalidConfig(format!(
            "cannot offload to LWP {target_lwp}: worker pool is 0..{workers} (management LWPs are reserved)"
        )));
    }
    let transfer = transfer_ps(descriptor_bytes, params.pcie_bw);
    let step = params.sched.control_step;
    Ok(OffloadPlan {
        transfer,
        control_steps: [step; 5],
        total: transfer + 5 * step,
    })
}
