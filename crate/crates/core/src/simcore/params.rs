//! Hardware and model parameters with their defaults, plus the string-keyed
//! override surface the CLI's `--set key=value` flags use.

use crate::flashvisor::BackboneGeometry;
use crate::units::{Ps, GIB, KIB, MIB, PS_PER_MS, PS_PER_NS, PS_PER_US};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerParams {
    /// Watts per LWP core while executing.
    pub lwp_w: f64,
    pub ddr3l_w: f64,
    /// Flash backbone / discrete SSD device power.
    pub ssd_w: f64,
    pub pcie_w: f64,
    pub host_cpu_w: f64,
    pub host_dram_w: f64,
    /// Idle power as a fraction of active power, per component.
    pub idle_fraction: f64,
    /// Charge host idle power during accelerator-only phases.
    pub count_host_idle: bool,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            lwp_w: 0.8,
            ddr3l_w: 0.7,
            ssd_w: 11.0,
            pcie_w: 0.17,
            host_cpu_w: 85.0,
            host_dram_w: 5.0,
            idle_fraction: 0.1,
            count_host_idle: false,
        }
    }
}

/// Baseline (host + discrete SSD) datapath parameters. The storage-stack
/// bandwidth and latency are desk-scale calibration knobs: defaults are set
/// so data-intensive workloads spend roughly three quarters of their time in
/// transfer on the baseline path.
#[derive(Debug, Clone, PartialEq)]
pub struct HostParams {
    pub ssd_read_bw: u64,
    pub ssd_write_bw: u64,
    /// Host storage-stack processing rate (file system, I/O runtime and
    /// user/kernel copies within host DRAM).
    pub stack_bw: u64,
    /// Fixed software latency per storage request.
    pub sw_latency: Ps,
    /// Overlap transfers with compute on the baseline path (off by default).
    pub double_buffer: bool,
}

impl Default for HostParams {
    fn default() -> Self {
        Self {
            ssd_read_bw: 2_000_000_000,
            ssd_write_bw: 1_000_000_000,
            stack_bw: 400_000_000,
            sw_latency: 100 * PS_PER_US,
            double_buffer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedParams {
    /// Fixed IPC/scheduling cost charged per screen dispatch.
    pub dispatch_overhead: Ps,
    /// Latency of one offload control step (interrupt, PSC sleep/wake,
    /// boot-address write, IPI).
    pub control_step: Ps,
    /// Skip the offload protocol: every kernel becomes schedulable at t=0.
    /// Used for scheduler-isolated studies.
    pub instant_arrival: bool,
}

impl Default for SchedParams {
    fn default() -> Self {
        Self {
            dispatch_overhead: 0,
            control_step: PS_PER_US,
            instant_arrival: false,
        }
    }
}

/// The full hardware parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareParams {
    pub lwp_count: u32,
    pub lwp_freq_hz: u64,
    /// Effective instructions per cycle per LWP (of the eight functional
    /// units; achieved IPC is a model parameter).
    pub ipc: u32,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub scratchpad_bytes: u64,
    pub scratchpad_freq_hz: u64,
    pub ddr3l_bytes: u64,
    pub ddr3l_bw: u64,
    /// DDR3L bytes charged per screen = footprint x this factor
    /// (cache-filtered load/store stream).
    pub ddr3l_traffic_factor: f64,
    /// Four SRIO lanes at 5 Gbps.
    pub srio_bw: u64,
    pub pcie_bw: u64,
    pub tier1_bw: u64,
    pub tier2_bw: u64,
    pub geometry: BackboneGeometry,
    /// Flashvisor queue-message handling time per mapping request.
    pub flashvisor_msg: Ps,
    /// DDR3L write-back buffer for flash writes.
    pub write_buffer_bytes: u64,
    /// Mapping-table journal dump period (None disables).
    pub journal_period: Option<Ps>,
    pub sched: SchedParams,
    pub host: HostParams,
    pub power: PowerParams,
}

impl Default for HardwareParams {
    fn default() -> Self {
        Self {
            lwp_count: 8,
            lwp_freq_hz: 1_000_000_000,
            ipc: 4,
            l1_bytes: 64 * KIB,
            l2_bytes: 512 * KIB,
            scratchpad_bytes: 4 * MIB,
            scratchpad_freq_hz: 500_000_000,
            ddr3l_bytes: GIB,
            ddr3l_bw: 6_400_000_000,
            ddr3l_traffic_factor: 1.0,
            srio_bw: 2_500_000_000,
            pcie_bw: 1_000_000_000,
            tier1_bw: 16_000_000_000,
            tier2_bw: 5_200_000_000,
            geometry: BackboneGeometry::default(),
            flashvisor_msg: PS_PER_US,
            write_buffer_bytes: 64 * MIB,
            journal_period: Some(100 * PS_PER_MS),
            sched: SchedParams::default(),
            host: HostParams::default(),
            power: PowerParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {message}")]
    InvalidValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("invalid parameters: {0}")]
    Inconsistent(String),
}

impl HardwareParams {
    /// Worker pool size: two LWPs stay reserved for Flashvisor and Storengine.
    pub fn workers(&self) -> u32 {
        self.lwp_count - 2
    }

    /// Effective flash transfer bandwidth: the SRIO link capped by the tier-2
    /// crossbar.
    pub fn flash_link_bw(&self) -> u64 {
        self.srio_bw.min(self.tier2_bw)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.lwp_count < 3 {
            return Err(ParamError::Inconsistent(
                "need at least 3 LWPs (two are reserved for management)".into(),
            ));
        }
        let positive = [
            self.lwp_freq_hz,
            self.ipc as u64,
            self.ddr3l_bw,
            self.srio_bw,
            self.pcie_bw,
            self.tier1_bw,
            self.tier2_bw,
            self.host.ssd_read_bw,
            self.host.ssd_write_bw,
            self.host.stack_bw,
        ];
        if positive.contains(&0) {
            return Err(ParamError::Inconsistent("frequencies and bandwidths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.power.idle_fraction) {
            return Err(ParamError::Inconsistent("power.idle_fraction outside [0, 1]".into()));
        }
        if self.ddr3l_traffic_factor < 0.0 {
            return Err(ParamError::Inconsistent("hw.ddr3l_traffic_factor must be >= 0".into()));
        }
        self.geometry
            .validate()
            .map_err(|e| ParamError::Inconsistent(e.to_string()))?;
        // Reclaim liveness: one block of migration headroom plus at least one
        // block of invalid groups under peak load.
        if self.geometry.reserved_blocks() < 2 {
            return Err(ParamError::Inconsistent(
                "over-provisioning must reserve at least two blocks".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ParamError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ParamError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
                message: e.to_string(),
            })
        }
        match key {
            "hw.lwp_count" => self.lwp_count = num(key, value)?,
            "hw.lwp_freq_hz" => self.lwp_freq_hz = num(key, value)?,
            "hw.ipc" => self.ipc = num(key, value)?,
            "hw.scratchpad_freq_hz" => self.scratchpad_freq_hz = num(key, value)?,
            "hw.ddr3l_bw" => self.ddr3l_bw = num(key, value)?,
            "hw.ddr3l_traffic_factor" => self.ddr3l_traffic_factor = num(key, value)?,
            "hw.srio_bw" => self.srio_bw = num(key, value)?,
            "hw.pcie_bw" => self.pcie_bw = num(key, value)?,
            "hw.tier1_bw" => self.tier1_bw = num(key, value)?,
            "hw.tier2_bw" => self.tier2_bw = num(key, value)?,
            "flash.read_latency_us" => self.geometry.read_latency = num::<u64>(key, value)? * PS_PER_US,
            "flash.write_latency_us" => self.geometry.write_latency = num::<u64>(key, value)? * PS_PER_US,
            "flash.erase_latency_us" => self.geometry.erase_latency = num::<u64>(key, value)? * PS_PER_US,
            "flash.capacity_mib" => self.geometry.capacity = num::<u64>(key, value)? * MIB,
            "flash.groups_per_block" => self.geometry.groups_per_block = num(key, value)?,
            "flash.over_provision_pct" => self.geometry.over_provision_pct = num(key, value)?,
            "fv.msg_ns" => self.flashvisor_msg = num::<u64>(key, value)? * PS_PER_NS,
            "fv.write_buffer_mib" => self.write_buffer_bytes = num::<u64>(key, value)? * MIB,
            "fv.journal_period_ms" => {
                let ms: u64 = num(key, value)?;
                self.journal_period = (ms > 0).then_some(ms * PS_PER_MS);
            }
            "sched.dispatch_overhead_ns" => {
                self.sched.dispatch_overhead = num::<u64>(key, value)? * PS_PER_NS
            }
            "sched.control_step_ns" => self.sched.control_step = num::<u64>(key, value)? * PS_PER_NS,
            "sched.instant_arrival" => self.sched.instant_arrival = num(key, value)?,
            "host.ssd_read_bw" => self.host.ssd_read_bw = num(key, value)?,
            "host.ssd_write_bw" => self.host.ssd_write_bw = num(key, value)?,
            "host.stack_bw" => self.host.stack_bw = num(key, value)?,
            "host.sw_latency_us" => self.host.sw_latency = num::<u64>(key, value)? * PS_PER_US,
            "host.double_buffer" => self.host.double_buffer = num(key, value)?,
            "power.lwp_w" => self.power.lwp_w = num(key, value)?,
            "power.ddr3l_w" => self.power.ddr3l_w = num(key, value)?,
            "power.ssd_w" => self.power.ssd_w = num(key, value)?,
            "power.pcie_w" => self.power.pcie_w = num(key, value)?,
            "power.host_cpu_w" => self.power.host_cpu_w = num(key, value)?,
            "power.host_dram_w" => self.power.host_dram_w = num(key, value)?,
            "power.idle_fraction" => self.power.idle_fraction = num(key, value)?,
            "power.count_host_idle" => self.power.count_host_idle = num(key, value)?,
            _ => return Err(ParamError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Deterministic key/value listing for report echo and diffing.
    pub fn echo(&self) -> Vec<(String, String)> {
        let g = &self.geometry;
        let mut kv: Vec<(String, String)> = vec![
            ("hw.lwp_count".into(), self.lwp_count.to_string()),
            ("hw.lwp_freq_hz".into(), self.lwp_freq_hz.to_string()),
            ("hw.ipc".into(), self.ipc.to_string()),
            ("hw.scratchpad_freq_hz".into(), self.scratchpad_freq_hz.to_string()),
            ("hw.ddr3l_bw".into(), self.ddr3l_bw.to_string()),
            ("hw.ddr3l_traffic_factor".into(), self.ddr3l_traffic_factor.to_string()),
            ("hw.srio_bw".into(), self.srio_bw.to_string()),
            ("hw.pcie_bw".into(), self.pcie_bw.to_string()),
            ("hw.tier1_bw".into(), self.tier1_bw.to_string()),
            ("hw.tier2_bw".into(), self.tier2_bw.to_string()),
            ("flash.read_latency_us".into(), (g.read_latency / PS_PER_US).to_string()),
            ("flash.write_latency_us".into(), (g.write_latency / PS_PER_US).to_string()),
            ("flash.erase_latency_us".into(), (g.erase_latency / PS_PER_US).to_string()),
            ("flash.capacity_mib".into(), (g.capacity / MIB).to_string()),
            ("flash.groups_per_block".into(), g.groups_per_block.to_string()),
            ("flash.over_provision_pct".into(), g.over_provision_pct.to_string()),
            ("fv.msg_ns".into(), (self.flashvisor_msg / PS_PER_NS).to_string()),
            ("fv.write_buffer_mib".into(), (self.write_buffer_bytes / MIB).to_string()),
            (
                "fv.journal_period_ms".into(),
                self.journal_period.map_or(0, |p| p / PS_PER_MS).to_string(),
            ),
            (
                "sched.dispatch_overhead_ns".into(),
                (self.sched.dispatch_overhead / PS_PER_NS).to_string(),
            ),
            ("sched.control_step_ns".into(), (self.sched.control_step / PS_PER_NS).to_string()),
            ("sched.instant_arrival".into(), self.sched.instant_arrival.to_string()),
            ("host.ssd_read_bw".into(), self.host.ssd_read_bw.to_string()),
            ("host.ssd_write_bw".into(), self.host.ssd_write_bw.to_string()),
            ("host.stack_bw".into(), self.host.stack_bw.to_string()),
            ("host.sw_latency_us".into(), (self.host.sw_latency / PS_PER_US).to_string()),
            ("host.double_buffer".into(), self.host.double_buffer.to_string()),
            ("power.lwp_w".into(), self.power.lwp_w.to_string()),
            ("power.ddr3l_w".into(), self.power.ddr3l_w.to_string()),
            ("power.ssd_w".into(), self.power.ssd_w.to_string()),
            ("power.pcie_w".into(), self.power.pcie_w.to_string()),
            ("power.host_cpu_w".into(), self.power.host_cpu_w.to_string()),
            ("power.host_dram_w".into(), self.power.host_dram_w.to_string()),
            ("power.idle_fraction".into(), self.power.idle_fraction.to_string()),
            ("power.count_host_idle".into(), self.power.count_host_idle.to_string()),
        ];
        kv.sort();
        kv
    }
}
