//! Simulated time and size arithmetic.
//!
//! All simulated time is integer picoseconds so that every duration in the
//! model (bandwidth transfers, cycle counts, flash array latencies) is exact
//! and runs replay bit-identically.

/// Simulated time / duration in picoseconds.
pub type Ps = u64;

pub const PS_PER_NS: Ps = 1_000;
pub const PS_PER_US: Ps = 1_000_000;
pub const PS_PER_MS: Ps = 1_000_000_000;
pub const PS_PER_SEC: Ps = 1_000_000_000_000;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Time to move `bytes` over a link of `bytes_per_sec`, rounded up to the
/// next picosecond. Zero bytes cost nothing.
pub fn transfer_ps(bytes: u64, bytes_per_sec: u64) -> Ps {
    if bytes == 0 {
        return 0;
    }
    assert!(bytes_per_sec > 0, "zero-bandwidth link");
    let num = bytes as u128 * PS_PER_SEC as u128;
    num.div_ceil(bytes_per_sec as u128) as Ps
}

/// Time to retire `instructions` at `ipc` instructions per cycle and
/// `freq_hz` cycles per second, rounded up to the next picosecond.
pub fn compute_ps(instructions: u64, ipc: u32, freq_hz: u64) -> Ps {
    if instructions == 0 {
        return 0;
    }
    let per_sec = ipc as u128 * freq_hz as u128;
    assert!(per_sec > 0, "zero execution rate");
    (instructions as u128 * PS_PER_SEC as u128).div_ceil(per_sec) as Ps
}

/// Picoseconds rendered as fractional nanoseconds ("123.456") for traces.
pub fn format_ns(ps: Ps) -> String {
    format!("{}.{:03}", ps / PS_PER_NS, ps % PS_PER_NS)
}

/// Picoseconds as f64 seconds (reporting only; never fed back into the model).
pub fn ps_to_secs(ps: Ps) -> f64 {
    ps as f64 / PS_PER_SEC as f64
}
