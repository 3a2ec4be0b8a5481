//! Abstract scheduling timeline: runs a policy over kernels with explicit
//! per-screen durations and nothing else (no I/O, no control overheads).
//! Backs the property suites and the canonical scheduling goldens.

use super::audit::{DispatchRecord, RecordKind};
use super::{KernelShape, PolicyKind, ProtocolViolation, Scheduler, SchedulerPolicy, ScreenAddr};
use crate::units::Ps;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// A scheduling-only workload: shapes plus per-screen durations.
#[derive(Debug, Clone)]
pub struct TimelineInstance {
    pub shapes: Vec<KernelShape>,
    /// Duration per `[kernel][mblk][screen]`.
    pub durations: Vec<Vec<Vec<Ps>>>,
    /// Arrival time per kernel instance.
    pub arrivals: Vec<Ps>,
    pub workers: u32,
}

impl TimelineInstance {
    /// Uniform-duration instance arriving at time zero.
    pub fn uniform(shapes: Vec<KernelShape>, screen_duration: Ps, workers: u32) -> Self {
        let durations = shapes
            .iter()
            .map(|s| {
                s.screens_per_mblk
                    .iter()
                    .map(|n| vec![screen_duration; *n as usize])
                    .collect()
            })
            .collect();
        let arrivals = vec![0; shapes.len()];
        Self {
            shapes,
            durations,
            arrivals,
            workers,
        }
    }

    pub fn duration_of(&self, addr: ScreenAddr) -> Ps {
        self.durations[addr.kernel][addr.mblk as usize][addr.screen as usize]
    }

    /// Serialized duration of one kernel (whole-kernel execution time under
    /// the inter-kernel policies).
    pub fn serial_duration(&self, kernel: usize) -> Ps {
        self.durations[kernel].iter().flatten().sum()
    }
}

#[derive(Debug, Clone)]
pub struct TimelineResult {
    pub records: Vec<DispatchRecord>,
    /// Completion time per kernel instance.
    pub completion: Vec<Ps>,
    pub makespan: Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrival(usize),
    Completion { lwp: u32, addr: ScreenAddr },
}

/// Drives the scheduler over the instance until quiescence. All events of one
/// instant are applied before the scheduler dispatches, matching the
/// management LWP draining its hardware queue before allocating work.
pub fn simulate(inst: &TimelineInstance, policy: PolicyKind) -> Result<TimelineResult, ProtocolViolation> {
    let mut sched = Scheduler::new(&inst.shapes, SchedulerPolicy::new(policy, inst.workers));
    let mut queue: BinaryHeap<Reverse<(Ps, u64, Ev)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for (k, t) in inst.arrivals.iter().enumerate() {
        queue.push(Reverse((*t, seq, Ev::Arrival(k))));
        seq += 1;
    }

    let mut records = Vec::new();
    let mut completion = vec![0; inst.shapes.len()];
    let mut makespan = 0;

    while let Some(Reverse((time, _, first))) = queue.pop() {
        makespan = makespan.max(time);
        let mut batch = vec![first];
        while let Some(Reverse((t, _, _))) = queue.peek() {
            if *t != time {
                break;
            }
            let Reverse((_, _, ev)) = queue.pop().unwrap();
            batch.push(ev);
        }
        for ev in batch {
            match ev {
                Ev::Arrival(k) => sched.on_arrival(k),
                Ev::Completion { lwp, addr } => {
                    records.push(DispatchRecord::new(time, lwp, &inst.shapes[addr.kernel], addr, RecordKind::Complete));
                    sched.on_completion(lwp, addr)?;
                    if sched.chain().kernel_complete(addr.kernel) {
                        completion[addr.kernel] = time;
                    }
                }
            }
        }
        for d in sched.poll() {
            records.push(DispatchRecord::new(time, d.lwp, &inst.shapes[d.screen.kernel], d.screen, RecordKind::Dispatch));
            let done = time + inst.duration_of(d.screen);
            queue.push(Reverse((done, seq, Ev::Completion { lwp: d.lwp, addr: d.screen })));
            seq += 1;
        }
    }
    debug_assert!(sched.all_complete(), "timeline ended with unfinished work");
    Ok(TimelineResult {
        records,
        completion,
        makespan,
    })
}
