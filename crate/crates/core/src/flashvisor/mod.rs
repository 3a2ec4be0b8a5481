//! Flash virtualization: logical->physical page-group translation, range
//! locking of flash-mapped data sections, and the in-scratchpad mapping table.
//!
//! All flash traffic is addressed at page-group granularity: one group stripes
//! one page per plane across every channel, so the default geometry maps
//! 64 KiB groups over a 32 GiB backbone with a 2 MiB table (4 bytes/entry).

mod rangelock;

pub use rangelock::{blocks_migration, conflicts, LockId, LockKind, LockOwner, PageSpan, RangeLockTree};

use crate::storengine::{AllocError, BlockPool};
use crate::units::{Ps, GIB, KIB, PS_PER_SEC};
use crate::workload::{ByteRange, ValidationLimits};
use thiserror::Error;

/// Bytes per flash word (word-based queue-message addressing).
pub const WORD_SIZE: u64 = 4;

/// Sentinel for an unmapped table entry.
pub const INVALID_ENTRY: u32 = u32::MAX;

/// Physical organization of the flash backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGeometry {
    pub channels: u32,
    pub packages_per_channel: u32,
    pub dies_per_package: u32,
    pub planes_per_die: u32,
    /// Flash page size in bytes.
    pub page_size: u64,
    /// Total capacity in bytes.
    pub capacity: u64,
    /// Page groups per erase block.
    pub groups_per_block: u32,
    /// Fraction of blocks reserved for reclaim headroom.
    pub over_provision_pct: f64,
    /// Page read latency (array time).
    pub read_latency: Ps,
    /// Page program latency (array time).
    pub write_latency: Ps,
    /// Block erase latency.
    pub erase_latency: Ps,
}

impl Default for BackboneGeometry {
    fn default() -> Self {
        Self {
            channels: 4,
            packages_per_channel: 4,
            dies_per_package: 2,
            planes_per_die: 2,
            page_size: 8 * KIB,
            capacity: 32 * GIB,
            groups_per_block: 256,
            over_provision_pct: 7.0,
            read_latency: 81 * crate::units::PS_PER_US,
            write_latency: 2_600 * crate::units::PS_PER_US,
            erase_latency: 5 * crate::units::PS_PER_MS,
        }
    }
}

impl BackboneGeometry {
    /// Translation granule: one page per plane across every channel.
    pub fn page_group_size(&self) -> u64 {
        self.channels as u64 * self.planes_per_die as u64 * self.page_size
    }

    pub fn total_groups(&self) -> u64 {
        self.capacity / self.page_group_size()
    }

    pub fn total_packages(&self) -> u32 {
        self.channels * self.packages_per_channel
    }

    pub fn pages_per_package(&self) -> u64 {
        self.capacity / self.total_packages() as u64 / self.page_size
    }

    pub fn pages_per_block(&self) -> u64 {
        self.groups_per_block as u64 * self.page_group_size() / self.page_size
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_groups() / self.groups_per_block as u64
    }

    /// Blocks held back from the addressable space for reclaim headroom.
    pub fn reserved_blocks(&self) -> u64 {
        let raw = (self.total_blocks() as f64 * self.over_provision_pct / 100.0).ceil() as u64;
        raw.clamp(1, self.total_blocks().saturating_sub(1))
    }

    pub fn addressable_groups(&self) -> u64 {
        (self.total_blocks() - self.reserved_blocks()) * self.groups_per_block as u64
    }

    pub fn addressable_bytes(&self) -> u64 {
        self.addressable_groups() * self.page_group_size()
    }

    /// Concurrent array operations the backbone sustains: one per die row
    /// (a page group occupies one die across every channel).
    pub fn array_lanes(&self) -> u32 {
        self.packages_per_channel * self.dies_per_package
    }

    /// Die-row lane serving a physical group.
    pub fn lane_of(&self, physical_group: u64) -> u32 {
        let package = physical_group / self.pages_per_package();
        let die = physical_group % self.dies_per_package as u64;
        (package as u32 * self.dies_per_package + die as u32) % self.array_lanes()
    }

    pub fn mapping_table_bytes(&self) -> u64 {
        self.total_groups() * 4
    }

    pub fn validation_limits(&self) -> ValidationLimits {
        ValidationLimits {
            page_group_size: self.page_group_size(),
            addressable_bytes: self.addressable_bytes(),
        }
    }

    pub fn validate(&self) -> Result<(), FlashError> {
        let all_positive = self.channels > 0
            && self.packages_per_channel > 0
            && self.dies_per_package > 0
            && self.planes_per_die > 0
            && self.page_size > 0
            && self.capacity > 0
            && self.groups_per_block > 0;
        if !all_positive {
            return Err(FlashError::Geometry("all geometry fields must be positive".into()));
        }
        let group = self.page_group_size();
        if !self.capacity.is_multiple_of(group) {
            return Err(FlashError::Geometry("capacity is not a whole number of page groups".into()));
        }
        if !self.capacity.is_multiple_of(self.total_packages() as u64 * self.page_size) {
            return Err(FlashError::Geometry("capacity does not divide across packages".into()));
        }
        if !self.total_groups().is_multiple_of(self.groups_per_block as u64) {
            return Err(FlashError::Geometry("groups do not divide into whole blocks".into()));
        }
        if self.total_blocks() < 2 {
            return Err(FlashError::Geometry("need at least two blocks".into()));
        }
        Ok(())
    }

    /// FNV-1a over the layout-defining fields; guards snapshot imports.
    pub fn layout_hash(&self) -> u32 {
        let mut h: u32 = 0x811c9dc5;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u32;
                h = h.wrapping_mul(0x01000193);
            }
        };
        eat(self.channels as u64);
        eat(self.packages_per_channel as u64);
        eat(self.dies_per_package as u64);
        eat(self.planes_per_die as u64);
        eat(self.page_size);
        eat(self.capacity);
        eat(self.groups_per_block as u64);
        h
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FlashError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("range [{start}, +{len}) not aligned to the {group}-byte page group")]
    Misaligned { start: u64, len: u64, group: u64 },
    #[error("range [{start}, +{len}) exceeds addressable capacity ({limit} bytes)")]
    CapacityExceeded { start: u64, len: u64, limit: u64 },
    #[error("logical group {0} has never been written")]
    NotFound(u64),
    #[error("no free page group; reclaim required")]
    NeedsReclaim,
    #[error("snapshot rejected: {0}")]
    Snapshot(String),
}

/// Logical->physical page-group map plus the reverse index the per-block
/// metadata pages would hold.
#[derive(Debug, Clone)]
pub struct PageGroupTable {
    entries: Vec<u32>,
    reverse: Vec<u32>,
    /// Last allocated physical group, if any write happened yet.
    write_cursor: Option<u32>,
}

impl PageGroupTable {
    pub fn new(total_groups: u64) -> Self {
        assert!(total_groups <= INVALID_ENTRY as u64);
        Self {
            entries: vec![INVALID_ENTRY; total_groups as usize],
            reverse: vec![INVALID_ENTRY; total_groups as usize],
            write_cursor: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn byte_size(&self) -> u64 {
        self.entries.len() as u64 * 4
    }

    pub fn lookup(&self, logical: u64) -> Option<u32> {
        let e = self.entries[logical as usize];
        (e != INVALID_ENTRY).then_some(e)
    }

    pub fn logical_of(&self, physical: u32) -> Option<u64> {
        let l = self.reverse[physical as usize];
        (l != INVALID_ENTRY).then_some(l as u64)
    }

    pub fn write_cursor(&self) -> Option<u32> {
        self.write_cursor
    }

    /// Binds `logical` to a freshly allocated `physical` group; returns the
    /// superseded physical group of this logical entry, if any.
    pub fn bind(&mut self, logical: u64, physical: u32) -> Option<u32> {
        let old = self.lookup(logical);
        if let Some(o) = old {
            self.reverse[o as usize] = INVALID_ENTRY;
        }
        self.entries[logical as usize] = physical;
        self.reverse[physical as usize] = logical as u32;
        self.write_cursor = Some(physical);
        old
    }

    /// Moves a mapping during reclaim without touching the write cursor
    /// semantics of `bind` (the destination is still the latest allocation).
    pub fn migrate(&mut self, logical: u64, from: u32, to: u32) {
        debug_assert_eq!(self.entries[logical as usize], from);
        self.reverse[from as usize] = INVALID_ENTRY;
        self.entries[logical as usize] = to;
        self.reverse[to as usize] = logical as u32;
        self.write_cursor = Some(to);
    }

    /// Drops a mapping entirely (bad-block retirement with no destination).
    pub fn unbind_physical(&mut self, physical: u32) {
        if let Some(l) = self.logical_of(physical) {
            self.entries[l as usize] = INVALID_ENTRY;
            self.reverse[physical as usize] = INVALID_ENTRY;
        }
    }

    pub fn valid_mappings(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| **e != INVALID_ENTRY)
            .map(|(l, e)| (l as u64, *e))
    }
}

/// Physical location of a translated read: the package holding the group's
/// pages and the in-package page index, fanned out across all channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhysicalLocation {
    pub package_index: u32,
    pub physical_page: u64,
    pub channel_fanout: u32,
}

/// Message a kernel posts to request a flash mapping for a data section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueMessage {
    pub request: LockKind,
    /// Kernel-local handle of the data section being mapped.
    pub section_ptr: u64,
    /// Word-based flash backbone address.
    pub word_address: u64,
    pub len_bytes: u64,
}

impl QueueMessage {
    pub fn new(request: LockKind, section_ptr: u64, range: ByteRange) -> Self {
        debug_assert_eq!(range.start % WORD_SIZE, 0);
        Self {
            request,
            section_ptr,
            word_address: range.start / WORD_SIZE,
            len_bytes: range.len,
        }
    }

    pub fn byte_range(&self) -> ByteRange {
        ByteRange::new(self.word_address * WORD_SIZE, self.len_bytes)
    }
}

/// Outcome of a granted mapping request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapGrant {
    pub lock: LockId,
    pub first_group: u64,
    pub group_count: u64,
}

/// A mapping request that must wait for a conflicting lock to be released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocked;

/// The flash virtualization state machine owned by the management LWP.
#[derive(Debug)]
pub struct Flashvisor {
    pub geometry: BackboneGeometry,
    pub table: PageGroupTable,
    pub locks: RangeLockTree,
    pub pool: BlockPool,
    /// Scratchpad access time charged per table lookup or update.
    pub lookup_ps: Ps,
}

/// Scratchpad access kind for `lookup_latency`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableAccess {
    Lookup,
    Update,
}

/// One table access per cycle of the given scratchpad clock.
pub fn scratchpad_access_ps(freq_hz: u64) -> Ps {
    if freq_hz == 0 {
        0
    } else {
        PS_PER_SEC.div_ceil(freq_hz)
    }
}

impl Flashvisor {
    pub fn new(geometry: BackboneGeometry, scratchpad_freq_hz: u64) -> Result<Self, FlashError> {
        geometry.validate()?;
        let table = PageGroupTable::new(geometry.total_groups());
        let pool = BlockPool::new(geometry.total_blocks(), geometry.groups_per_block);
        Ok(Self {
            geometry,
            table,
            locks: RangeLockTree::new(),
            pool,
            lookup_ps: scratchpad_access_ps(scratchpad_freq_hz),
        })
    }

    /// Constant scratchpad cost added to every translation.
    pub fn lookup_latency(&self, _kind: TableAccess) -> Ps {
        self.lookup_ps
    }

    pub fn page_span(&self, range: ByteRange) -> PageSpan {
        let first = range.start / self.geometry.page_size;
        let last = (range.end() - 1) / self.geometry.page_size;
        PageSpan::new(first, last)
    }

    fn check_range(&self, range: ByteRange) -> Result<(), FlashError> {
        let group = self.geometry.page_group_size();
        if !range.start.is_multiple_of(group) || !range.len.is_multiple_of(group) {
            return Err(FlashError::Misaligned {
                start: range.start,
                len: range.len,
                group,
            });
        }
        let limit = self.geometry.addressable_bytes();
        if range.end() > limit {
            return Err(FlashError::CapacityExceeded {
                start: range.start,
                len: range.len,
                limit,
            });
        }
        Ok(())
    }

    /// Grants (or blocks) a data-section mapping request under the range lock.
    pub fn map_section(
        &mut self,
        msg: &QueueMessage,
        owner: LockOwner,
    ) -> Result<Result<MapGrant, Blocked>, FlashError> {
        let range = msg.byte_range();
        self.check_range(range)?;
        let span = self.page_span(range);
        match self.locks.try_acquire(span, msg.request, owner) {
            Some(lock) => {
                let group = self.geometry.page_group_size();
                Ok(Ok(MapGrant {
                    lock,
                    first_group: range.start / group,
                    group_count: range.len / group,
                }))
            }
            None => Ok(Err(Blocked)),
        }
    }

    pub fn release(&mut self, lock: LockId) {
        self.locks.release(lock);
    }

    /// Logical group index of a word-based backbone address.
    pub fn logical_group_of_word(&self, word_address: u64) -> u64 {
        word_address * WORD_SIZE / self.geometry.page_group_size()
    }

    /// Translates a read: package index is the physical group divided by the
    /// per-package page count, the remainder is the physical page, and the
    /// request fans out across every channel.
    pub fn translate_read(&self, word_address: u64) -> Result<PhysicalLocation, FlashError> {
        let logical = self.logical_group_of_word(word_address);
        self.translate_read_group(logical)
    }

    pub fn translate_read_group(&self, logical_group: u64) -> Result<PhysicalLocation, FlashError> {
        let physical = self
            .table
            .lookup(logical_group)
            .ok_or(FlashError::NotFound(logical_group))? as u64;
        let per_package = self.geometry.pages_per_package();
        Ok(PhysicalLocation {
            package_index: (physical / per_package) as u32,
            physical_page: physical % per_package,
            channel_fanout: self.geometry.channels,
        })
    }

    /// Allocates the next page group for a logical write, invalidating any
    /// previous binding. `NeedsReclaim` stalls the write until the storage
    /// manager frees a block; it is not a failure.
    pub fn translate_write_group(&mut self, logical_group: u64) -> Result<u32, FlashError> {
        let physical = match self.pool.allocate_group() {
            Ok(p) => p,
            Err(AllocError::NoFreeGroup) => return Err(FlashError::NeedsReclaim),
        };
        if let Some(old) = self.table.bind(logical_group, physical) {
            self.pool.invalidate_group(old);
        }
        Ok(physical)
    }

    pub fn translate_write(&mut self, word_address: u64) -> Result<u32, FlashError> {
        let logical = self.logical_group_of_word(word_address);
        self.translate_write_group(logical)
    }

    /// Injective-mapping audit used by the storage-consistency tests.
    pub fn mapping_is_injective(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.table.valid_mappings().all(|(_, p)| seen.insert(p))
    }

    // Mapping-table snapshot: 16-byte header {magic, layout hash, cursor}
    // followed by one 4-byte little-endian entry per logical group.

    pub fn export_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.table.len() * 4);
        out.extend_from_slice(&SNAPSHOT_MAGIC.to_le_bytes());
        out.extend_from_slice(&self.geometry.layout_hash().to_le_bytes());
        let cursor = self.table.write_cursor().map_or(u64::MAX, |c| c as u64);
        out.extend_from_slice(&cursor.to_le_bytes());
        for logical in 0..self.table.len() as u64 {
            let e = self.table.lookup(logical).unwrap_or(INVALID_ENTRY);
            out.extend_from_slice(&e.to_le_bytes());
        }
        out
    }

    pub fn import_snapshot(&mut self, bytes: &[u8]) -> Result<(), FlashError> {
        if bytes.len() != 16 + self.table.len() * 4 {
            return Err(FlashError::Snapshot(format!(
                "expected {} bytes, got {}",
                16 + self.table.len() * 4,
                bytes.len()
            )));
        }
        let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if magic != SNAPSHOT_MAGIC {
            return Err(FlashError::Snapshot("bad magic".into()));
        }
        let hash = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if hash != self.geometry.layout_hash() {
            return Err(FlashError::Snapshot("geometry hash mismatch".into()));
        }
        let cursor = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut table = PageGroupTable::new(self.table.len() as u64);
        for logical in 0..table.len() as u64 {
            let off = 16 + logical as usize * 4;
            let e = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if e != INVALID_ENTRY {
                if e as u64 >= table.len() as u64 {
                    return Err(FlashError::Snapshot(format!("entry {logical} out of range")));
                }
                table.bind(logical, e);
            }
        }
        table.write_cursor = (cursor != u64::MAX).then_some(cursor as u32);
        self.table = table;
        Ok(())
    }
}

const SNAPSHOT_MAGIC: u32 = 0x4742_4150; // "PABG" little-endian

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{MIB, PS_PER_US};

    fn fv() -> Flashvisor {
        Flashvisor::new(BackboneGeometry::default(), 500_000_000).unwrap()
    }

    /// Small geometry for write-path tests: 16 groups of 64 KiB in 4 blocks.
    pub(crate) fn mini_geometry() -> BackboneGeometry {
        BackboneGeometry {
            capacity: 16 * 64 * KIB,
            groups_per_block: 4,
            packages_per_channel: 1,
            dies_per_package: 1,
            over_provision_pct: 25.0,
            ..BackboneGeometry::default()
        }
    }

    #[test]
    fn default_geometry_figures() {
        let g = BackboneGeometry::default();
        g.validate().unwrap();
        assert_eq!(g.page_group_size(), 64 * KIB);
        assert_eq!(g.total_groups(), 524_288);
        assert_eq!(g.pages_per_package(), 262_144);
        assert_eq!(g.mapping_table_bytes(), 2 * MIB);
        assert_eq!(g.array_lanes(), 8);
    }

    #[test]
    fn table_size_is_two_mebibytes() {
        assert_eq!(fv().table.byte_size(), 2 * MIB);
    }

    #[test]
    fn read_translation_division_rule() {
        let mut v = fv();
        v.table.bind(0, 0);
        let loc = v.translate_read_group(0).unwrap();
        assert_eq!((loc.package_index, loc.physical_page), (0, 0));

        v.table.bind(1, 262_145);
        let loc = v.translate_read_group(1).unwrap();
        assert_eq!((loc.package_index, loc.physical_page), (1, 1));
        assert_eq!(loc.channel_fanout, 4);
    }

    #[test]
    fn read_of_unwritten_group_not_found() {
        assert_eq!(fv().translate_read_group(7), Err(FlashError::NotFound(7)));
    }

    #[test]
    fn first_write_lands_on_group_zero() {
        let mut v = Flashvisor::new(mini_geometry(), 500_000_000).unwrap();
        assert_eq!(v.translate_write_group(5).unwrap(), 0);
        assert_eq!(v.table.write_cursor(), Some(0));
    }

    #[test]
    fn rewrite_advances_cursor_and_invalidates() {
        let mut v = Flashvisor::new(mini_geometry(), 500_000_000).unwrap();
        let first = v.translate_write_group(3).unwrap();
        let second = v.translate_write_group(3).unwrap();
        assert_eq!(second, first + 1);
        assert_eq!(v.table.lookup(3), Some(second));
        assert_eq!(v.table.logical_of(first), None);
        assert!(v.mapping_is_injective());
    }

    #[test]
    fn lookup_latency_defaults() {
        let v = fv();
        assert_eq!(v.lookup_latency(TableAccess::Lookup), 2_000);
        assert_eq!(v.lookup_latency(TableAccess::Update), 2_000);
        let zero = Flashvisor::new(BackboneGeometry::default(), 0).unwrap();
        assert_eq!(zero.lookup_latency(TableAccess::Lookup), 0);
    }

    #[test]
    fn map_section_misaligned_and_capacity_errors() {
        let mut v = fv();
        let msg = QueueMessage::new(LockKind::ReadMap, 0, ByteRange::new(0, 1000));
        assert!(matches!(v.map_section(&msg, LockOwner::Kernel(0)), Err(FlashError::Misaligned { .. })));
        let too_far = ByteRange::new(v.geometry.addressable_bytes(), 64 * KIB);
        let msg = QueueMessage::new(LockKind::WriteMap, 0, too_far);
        assert!(matches!(
            v.map_section(&msg, LockOwner::Kernel(0)),
            Err(FlashError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn map_section_blocks_foreign_write_overlap() {
        let mut v = fv();
        let w = QueueMessage::new(LockKind::WriteMap, 0, ByteRange::new(0, 128 * KIB));
        let grant = v.map_section(&w, LockOwner::Kernel(0)).unwrap().unwrap();
        let r = QueueMessage::new(LockKind::ReadMap, 1, ByteRange::new(64 * KIB, 128 * KIB));
        assert_eq!(v.map_section(&r, LockOwner::Kernel(1)).unwrap(), Err(Blocked));
        v.release(grant.lock);
        assert!(v.map_section(&r, LockOwner::Kernel(1)).unwrap().is_ok());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut v = Flashvisor::new(mini_geometry(), 500_000_000).unwrap();
        for logical in [0u64, 3, 7, 2] {
            v.translate_write_group(logical).unwrap();
        }
        let snap = v.export_snapshot();
        assert_eq!(snap.len(), 16 + v.table.len() * 4);

        let mut other = Flashvisor::new(mini_geometry(), 500_000_000).unwrap();
        other.import_snapshot(&snap).unwrap();
        assert_eq!(other.table.lookup(3), v.table.lookup(3));
        assert_eq!(other.table.write_cursor(), v.table.write_cursor());

        let mut wrong = fv();
        assert!(matches!(wrong.import_snapshot(&snap), Err(FlashError::Snapshot(_))));
    }

    #[test]
    fn group_read_costs_array_latency() {
        let g = BackboneGeometry::default();
        assert_eq!(g.read_latency, 81 * PS_PER_US);
        assert_eq!(g.write_latency, 2_600 * PS_PER_US);
    }
}
