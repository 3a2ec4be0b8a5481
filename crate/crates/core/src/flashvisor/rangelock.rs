//! Interval admission control over flash-mapped data sections.
//!
//! An ordered tree keyed by start page number; each node carries the last
//! page, the mapping request type and the owning kernel. Read-maps conflict
//! with overlapping write-maps of a different owner; write-maps conflict with
//! every overlapping write-map.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockKind {
    ReadMap,
    WriteMap,
}

/// Lock owner: a kernel instance, or the storage manager migrating groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockOwner {
    Kernel(u64),
    Storengine,
}

/// Inclusive page interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageSpan {
    pub first: u64,
    pub last: u64,
}

impl PageSpan {
    pub fn new(first: u64, last: u64) -> Self {
        assert!(first <= last, "empty page span");
        Self { first, last }
    }

    fn overlaps(&self, other: &PageSpan) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockId {
    start: u64,
    seq: u64,
}

#[derive(Debug, Clone, Copy)]
struct LockNode {
    last: u64,
    kind: LockKind,
    owner: LockOwner,
    seq: u64,
}

pub fn conflicts(a_kind: LockKind, a_owner: LockOwner, b_kind: LockKind, b_owner: LockOwner) -> bool {
    match (a_kind, b_kind) {
        (LockKind::ReadMap, LockKind::ReadMap) => false,
        (LockKind::WriteMap, LockKind::WriteMap) => true,
        _ => a_owner != b_owner,
    }
}

/// Whether a held lock defers a storage-manager migration copy. Read-maps
/// do (the data is being fetched); a kernel's write-map does not, since the
/// owner is about to supersede that range and its rebind waits for the copy
/// lock anyway. Without this carve-out, a write stalled on reclaim while
/// holding its section lock would deadlock against the reclaim migrating the
/// stale groups underneath it.
pub fn blocks_migration(kind: LockKind, owner: LockOwner) -> bool {
    kind == LockKind::ReadMap || owner == LockOwner::Storengine
}

#[derive(Debug, Default)]
pub struct RangeLockTree {
    nodes: BTreeMap<u64, Vec<LockNode>>,
    next_seq: u64,
    len: usize,
}

impl RangeLockTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether a request would collide with a lock currently in force.
    pub fn would_block(&self, span: PageSpan, kind: LockKind, owner: LockOwner) -> bool {
        self.nodes
            .range(..=span.last)
            .flat_map(|(start, nodes)| nodes.iter().map(move |n| (*start, n)))
            .any(|(start, node)| {
                PageSpan::new(start, node.last).overlaps(&span)
                    && conflicts(kind, owner, node.kind, node.owner)
            })
    }

    /// Whether a migration copy of this span must wait.
    pub fn would_block_migration(&self, span: PageSpan) -> bool {
        self.nodes
            .range(..=span.last)
            .flat_map(|(start, nodes)| nodes.iter().map(move |n| (*start, n)))
            .any(|(start, node)| {
                PageSpan::new(start, node.last).overlaps(&span)
                    && blocks_migration(node.kind, node.owner)
            })
    }

    /// Acquires the storage manager's copy lock: deferred only by read-maps
    /// and other migration locks, but held as a write-map so foreground
    /// requests wait for the copy to finish.
    pub fn try_acquire_migration(&mut self, span: PageSpan) -> Option<LockId> {
        if self.would_block_migration(span) {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.nodes.entry(span.first).or_default().push(LockNode {
            last: span.last,
            kind: LockKind::WriteMap,
            owner: LockOwner::Storengine,
            seq,
        });
        self.len += 1;
        Some(LockId { start: span.first, seq })
    }

    /// Inserts the lock if compatible with everything in force; otherwise the
    /// request must wait for a release.
    pub fn try_acquire(&mut self, span: PageSpan, kind: LockKind, owner: LockOwner) -> Option<LockId> {
        if self.would_block(span, kind, owner) {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.nodes.entry(span.first).or_default().push(LockNode {
            last: span.last,
            kind,
            owner,
            seq,
        });
        self.len += 1;
        Some(LockId { start: span.first, seq })
    }

    pub fn release(&mut self, id: LockId) {
        let nodes = self.nodes.get_mut(&id.start).expect("release of unknown lock");
        let pos = nodes
            .iter()
            .position(|n| n.seq == id.seq)
            .expect("release of unknown lock");
        nodes.swap_remove(pos);
        if nodes.is_empty() {
            self.nodes.remove(&id.start);
        }
        self.len -= 1;
    }

    /// In-force spans owned by `owner` (tests and diagnostics).
    pub fn spans_of(&self, owner: LockOwner) -> Vec<PageSpan> {
        let mut out: Vec<PageSpan> = self
            .nodes
            .iter()
            .flat_map(|(start, nodes)| {
                nodes
                    .iter()
                    .filter(move |n| n.owner == owner)
                    .map(move |n| PageSpan::new(*start, n.last))
            })
            .collect();
        out.sort_by_key(|s| s.first);
        out
    }
}
