//! Timeline auditor: replays a dispatch trace against the workload shape and
//! reports dependency-safety and work-conservation violations.

use super::{KernelShape, PolicyKind, ScreenAddr};
use crate::units::Ps;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Dispatch,
    Complete,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Dispatch => "dispatch",
            RecordKind::Complete => "complete",
        }
    }
}

/// One row of the dispatch trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchRecord {
    pub time: Ps,
    pub lwp: u32,
    /// Kernel-instance index within the run.
    pub kernel: usize,
    pub app_id: u32,
    pub kernel_id: u32,
    pub instance: u32,
    pub mblk: u32,
    pub screen: u32,
    pub kind: RecordKind,
}

impl DispatchRecord {
    pub fn new(time: Ps, lwp: u32, shape: &KernelShape, addr: ScreenAddr, kind: RecordKind) -> Self {
        Self {
            time,
            lwp,
            kernel: addr.kernel,
            app_id: shape.app_id,
            kernel_id: shape.kernel_id,
            instance: shape.instance,
            mblk: addr.mblk,
            screen: addr.screen,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time: Ps,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.time, self.message)
    }
}

/// Full audit: dependency safety and per-LWP exclusivity for every policy,
/// plus work conservation for the two greedy policies.
pub fn audit(
    shapes: &[KernelShape],
    arrivals: &[Ps],
    records: &[DispatchRecord],
    policy: PolicyKind,
    workers: u32,
) -> Vec<Violation> {
    let mut violations = check_dependency_safety(shapes, records);
    violations.extend(check_lwp_exclusivity(records));
    if matches!(policy, PolicyKind::InterDy | PolicyKind::IntraO3) {
        violations.extend(check_work_conservation(shapes, arrivals, records, policy, workers));
    }
    violations.sort_by_key(|v| v.time);
    violations
}

/// At no instant may a screen of node i+1 run while a screen of node i is
/// not done: every start in microblock m must be at or after the last
/// completion in microblock m-1 of the same kernel.
pub fn check_dependency_safety(shapes: &[KernelShape], records: &[DispatchRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut starts: BTreeMap<(usize, u32), Ps> = BTreeMap::new();
    let mut last_done: BTreeMap<(usize, u32), Ps> = BTreeMap::new();
    let mut done_count: BTreeMap<(usize, u32), u32> = BTreeMap::new();
    for r in records {
        match r.kind {
            RecordKind::Dispatch => {
                let e = starts.entry((r.kernel, r.mblk)).or_insert(r.time);
                *e = (*e).min(r.time);
            }
            RecordKind::Complete => {
                let e = last_done.entry((r.kernel, r.mblk)).or_insert(r.time);
                *e = (*e).max(r.time);
                *done_count.entry((r.kernel, r.mblk)).or_insert(0) += 1;
            }
        }
    }
    for (k, shape) in shapes.iter().enumerate() {
        for m in 1..shape.screens_per_mblk.len() as u32 {
            let Some(start) = starts.get(&(k, m)) else { continue };
            let prev_done = last_done.get(&(k, m - 1)).copied();
            let prev_complete = done_count.get(&(k, m - 1)).copied().unwrap_or(0)
                == shape.screens_per_mblk[(m - 1) as usize];
            if !prev_complete || prev_done.is_none_or(|d| *start < d) {
                out.push(Violation {
                    time: *start,
                    message: format!(
                        "kernel {k} microblock {m} started at {start} before microblock {} completed",
                        m - 1
                    ),
                });
            }
        }
    }
    out
}

/// One screen per LWP at a time: dispatch/complete pairs on the same LWP
/// must not interleave.
pub fn check_lwp_exclusivity(records: &[DispatchRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut busy: BTreeMap<u32, (usize, u32, u32)> = BTreeMap::new();
    for r in records {
        match r.kind {
            RecordKind::Dispatch => {
                if let Some(prev) = busy.insert(r.lwp, (r.kernel, r.mblk, r.screen)) {
                    out.push(Violation {
                        time: r.time,
                        message: format!(
                            "lwp {} dispatched kernel {} while still running kernel {} mblk {} screen {}",
                            r.lwp, r.kernel, prev.0, prev.1, prev.2
                        ),
                    });
                }
            }
            RecordKind::Complete => {
                if busy.remove(&r.lwp).is_none() {
                    out.push(Violation {
                        time: r.time,
                        message: format!("lwp {} completed while idle", r.lwp),
                    });
                }
            }
        }
    }
    out
}

/// Replays the trace and flags any inter-event interval in which a worker
/// sat idle while the policy had dispatchable work.
fn check_work_conservation(
    shapes: &[KernelShape],
    arrivals: &[Ps],
    records: &[DispatchRecord],
    policy: PolicyKind,
    workers: u32,
) -> Vec<Violation> {
    let mut out = Vec::new();

    // Status per kernel/mblk/screen: 0 pending, 1 running, 2 done.
    let mut status: Vec<Vec<Vec<u8>>> = shapes
        .iter()
        .map(|s| s.screens_per_mblk.iter().map(|n| vec![0u8; *n as usize]).collect())
        .collect();
    let mut busy_lwps = 0u32;

    let mut times: Vec<Ps> = records.iter().map(|r| r.time).chain(arrivals.iter().copied()).collect();
    times.sort_unstable();
    times.dedup();

    let mut idx = 0;
    for t in times {
        while idx < records.len() && records[idx].time == t {
            let r = &records[idx];
            let cell = &mut status[r.kernel][r.mblk as usize][r.screen as usize];
            match r.kind {
                RecordKind::Dispatch => {
                    *cell = 1;
                    busy_lwps += 1;
                }
                RecordKind::Complete => {
                    *cell = 2;
                    busy_lwps -= 1;
                }
            }
            idx += 1;
        }
        let idle = workers - busy_lwps;
        if idle == 0 {
            continue;
        }
        let kernel_complete =
            |k: usize| status[k].iter().all(|mblk| mblk.iter().all(|s| *s == 2));
        let kernel_running = |k: usize| status[k].iter().any(|mblk| mblk.contains(&1));
        let dispatchable: u64 = match policy {
            // A kernel runs whole on one LWP: any arrived incomplete kernel
            // with no screen running should have been (re)dispatched.
            PolicyKind::InterDy => (0..shapes.len())
                .filter(|k| arrivals[*k] <= t && !kernel_complete(*k) && !kernel_running(*k))
                .count() as u64,
            PolicyKind::IntraO3 => (0..shapes.len())
                .filter(|k| arrivals[*k] <= t && !kernel_complete(*k))
                .map(|k| {
                    let frontier = status[k]
                        .iter()
                        .position(|mblk| mblk.iter().any(|s| *s != 2))
                        .unwrap();
                    status[k][frontier].iter().filter(|s| **s == 0).count() as u64
                })
                .sum(),
            _ => 0,
        };
        if dispatchable > 0 {
            out.push(Violation {
                time: t,
                message: format!(
                    "{idle} idle worker(s) at {t} with {dispatchable} dispatchable unit(s) under {policy}"
                ),
            });
        }
    }
    out
}
