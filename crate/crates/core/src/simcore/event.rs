//! Event timeline plumbing: the deterministic event queue, FIFO-serial
//! resource reservations, and per-component busy-interval ledgers.

use crate::units::Ps;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Hardware component identity used for busy accounting and traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    /// Worker LWP (pool index).
    Lwp(u32),
    FlashvisorLwp,
    StorengineLwp,
    Ddr3l,
    Channel(u32),
    Srio,
    Pcie,
    Ssd,
    HostCpu,
    HostDram,
}

impl Component {
    pub fn label(&self) -> String {
        match self {
            Component::Lwp(i) => format!("lwp{i}"),
            Component::FlashvisorLwp => "lwp_flashvisor".into(),
            Component::StorengineLwp => "lwp_storengine".into(),
            Component::Ddr3l => "ddr3l".into(),
            Component::Channel(c) => format!("channel{c}"),
            Component::Srio => "srio".into(),
            Component::Pcie => "pcie".into(),
            Component::Ssd => "ssd".into(),
            Component::HostCpu => "host_cpu".into(),
            Component::HostDram => "host_dram".into(),
        }
    }
}

/// Trace event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Dispatch,
    ComputeDone,
    FlashRead,
    FlashWrite,
    Dma,
    Control,
    Journal,
    Gc,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Dispatch => "dispatch",
            EventKind::ComputeDone => "compute-done",
            EventKind::FlashRead => "flash-read",
            EventKind::FlashWrite => "flash-write",
            EventKind::Dma => "dma",
            EventKind::Control => "control",
            EventKind::Journal => "journal",
            EventKind::Gc => "gc",
        }
    }
}

/// One exported trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: Ps,
    pub actor: Component,
    pub kind: EventKind,
    pub app: Option<u32>,
    pub kernel: Option<u32>,
    pub instance: Option<u32>,
    pub mblk: Option<u32>,
    pub screen: Option<u32>,
}

/// Busy intervals of one component. Intervals may be appended out of order;
/// totals are computed over the merged union.
#[derive(Debug, Clone, Default)]
pub struct BusyLedger {
    intervals: Vec<(Ps, Ps)>,
}

impl BusyLedger {
    pub fn add(&mut self, start: Ps, end: Ps) {
        if end > start {
            self.intervals.push((start, end));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Non-overlapping, sorted union of the recorded intervals.
    pub fn merged(&self) -> Vec<(Ps, Ps)> {
        let mut v = self.intervals.clone();
        v.sort_unstable();
        let mut out: Vec<(Ps, Ps)> = Vec::with_capacity(v.len());
        for (s, e) in v {
            match out.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => out.push((s, e)),
            }
        }
        out
    }

    pub fn total(&self) -> Ps {
        self.merged().iter().map(|(s, e)| e - s).sum()
    }

    pub fn last_end(&self) -> Ps {
        self.intervals.iter().map(|(_, e)| *e).max().unwrap_or(0)
    }
}

/// FIFO serial server: reservations start no earlier than the previous
/// reservation ends. Models shared links and serialized pipeline stages.
#[derive(Debug, Default)]
pub struct Resource {
    free_at: Ps,
}

impl Resource {
    /// Reserves `dur` starting at `max(now, free time)`; returns the busy
    /// interval.
    pub fn acquire(&mut self, now: Ps, dur: Ps) -> (Ps, Ps) {
        let start = self.free_at.max(now);
        let end = start + dur;
        self.free_at = end;
        (start, end)
    }

    pub fn free_at(&self) -> Ps {
        self.free_at
    }
}

/// The discrete-event queue plus the per-component busy ledgers.
pub struct EventTimeline<E> {
    queue: BinaryHeap<Reverse<(Ps, u64, E)>>,
    seq: u64,
    pub busy: std::collections::BTreeMap<Component, BusyLedger>,
    last_popped: Ps,
}

impl<E: Ord> EventTimeline<E> {
    pub fn new() -> Self {
        Self {
            queue: BinaryHeap::new(),
            seq: 0,
            busy: std::collections::BTreeMap::new(),
            last_popped: 0,
        }
    }

    /// Schedules an event; FIFO among equal times by insertion order.
    pub fn push(&mut self, time: Ps, ev: E) {
        self.queue.push(Reverse((time, self.seq, ev)));
        self.seq += 1;
    }

    /// Pops the next event. Times are non-decreasing.
    pub fn pop(&mut self) -> Option<(Ps, E)> {
        let Reverse((time, _, ev)) = self.queue.pop()?;
        debug_assert!(time >= self.last_popped, "event time went backwards");
        self.last_popped = time;
        Some((time, ev))
    }

    pub fn peek_time(&self) -> Option<Ps> {
        self.queue.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn charge(&mut self, component: Component, start: Ps, end: Ps) {
        self.busy.entry(component).or_default().add(start, end);
    }
}

impl<E: Ord> Default for EventTimeline<E> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_orders_by_time_then_insertion() {
        let mut t: EventTimeline<u32> = EventTimeline::new();
        t.push(10, 1);
        t.push(5, 2);
        t.push(10, 3);
        assert_eq!(t.pop(), Some((5, 2)));
        assert_eq!(t.pop(), Some((10, 1)));
        assert_eq!(t.pop(), Some((10, 3)));
        assert_eq!(t.pop(), None);
    }

    #[test]
    fn resource_serializes_requests() {
        let mut r = Resource::default();
        assert_eq!(r.acquire(0, 10), (0, 10));
        assert_eq!(r.acquire(3, 10), (10, 20));
        assert_eq!(r.acquire(50, 5), (50, 55));
    }

    #[test]
    fn ledger_merges_overlaps() {
        let mut l = BusyLedger::default();
        l.add(10, 20);
        l.add(0, 5);
        l.add(15, 30);
        l.add(30, 31);
        assert_eq!(l.merged(), vec![(0, 5), (10, 31)]);
        assert_eq!(l.total(), 26);
    }
}
