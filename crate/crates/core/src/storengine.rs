//! Background storage management on its own LWP: round-robin garbage
//! collection with valid-group migration, periodic journaling of the mapping
//! table, and bad-block retirement. All of it overlaps foreground translation
//! in the event loop; only the range locks serialize against it.

use crate::flashvisor::{FlashError, Flashvisor};
use crate::units::Ps;
use thiserror::Error;

pub type BlockId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Free,
    /// Currently receiving allocations.
    Active,
    Used,
    /// Permanently excluded after an uncorrectable error.
    Retired,
}

#[derive(Debug, Clone)]
pub struct BlockState {
    pub status: BlockStatus,
    pub valid_groups: u32,
    pub erase_count: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("no free page group")]
    NoFreeGroup,
}

#[derive(Debug, Error, PartialEq)]
pub enum GcError {
    #[error("nothing to reclaim: used block pool is empty")]
    NothingToReclaim,
    #[error("gc deadlock: destination space exhausted while migrating block {0} (over-provisioning misconfigured)")]
    Deadlock(BlockId),
    #[error("cannot retire block {0}: free list empty")]
    RetireNoSpare(BlockId),
    #[error("block {0} is not in the used pool")]
    NotUsed(BlockId),
}

/// Free/used block pools with the round-robin victim cursor.
#[derive(Debug)]
pub struct BlockPool {
    groups_per_block: u32,
    blocks: Vec<BlockState>,
    free: std::collections::VecDeque<BlockId>,
    active: Option<(BlockId, u32)>,
    /// Next block id the victim scan starts from.
    victim_cursor: BlockId,
}

impl BlockPool {
    pub fn new(total_blocks: u64, groups_per_block: u32) -> Self {
        Self {
            groups_per_block,
            blocks: vec![
                BlockState {
                    status: BlockStatus::Free,
                    valid_groups: 0,
                    erase_count: 0,
                };
                total_blocks as usize
            ],
            free: (0..total_blocks as BlockId).collect(),
            active: None,
            victim_cursor: 0,
        }
    }

    pub fn groups_per_block(&self) -> u32 {
        self.groups_per_block
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, id: BlockId) -> &BlockState {
        &self.blocks[id as usize]
    }

    pub fn first_group_of(&self, id: BlockId) -> u64 {
        id as u64 * self.groups_per_block as u64
    }

    pub fn block_of_group(&self, physical_group: u64) -> BlockId {
        (physical_group / self.groups_per_block as u64) as BlockId
    }

    /// Groups still allocatable without a reclaim.
    pub fn free_groups(&self) -> u64 {
        let in_free = self.free.len() as u64 * self.groups_per_block as u64;
        let in_active = self
            .active
            .map_or(0, |(_, next)| (self.groups_per_block - next) as u64);
        in_free + in_active
    }

    pub fn used_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.status == BlockStatus::Used)
            .map(|(i, _)| i as BlockId)
    }

    /// Allocates the next physical group, opening a fresh block when the
    /// current one fills. Fails only when every block is used.
    pub fn allocate_group(&mut self) -> Result<u32, AllocError> {
        if self.active.is_none() {
            let id = self.free.pop_front().ok_or(AllocError::NoFreeGroup)?;
            self.blocks[id as usize].status = BlockStatus::Active;
            self.active = Some((id, 0));
        }
        let (id, next) = self.active.unwrap();
        let group = id * self.groups_per_block + next;
        self.blocks[id as usize].valid_groups += 1;
        if next + 1 == self.groups_per_block {
            self.blocks[id as usize].status = BlockStatus::Used;
            self.active = None;
        } else {
            self.active = Some((id, next + 1));
        }
        Ok(group)
    }

    /// Marks a superseded group's block as holding one fewer valid group.
    pub fn invalidate_group(&mut self, physical_group: u32) {
        let id = self.block_of_group(physical_group as u64);
        let b = &mut self.blocks[id as usize];
        debug_assert!(b.valid_groups > 0, "double invalidate in block {id}");
        b.valid_groups -= 1;
    }

    /// Round-robin victim selection: the next used block at or after the
    /// cursor, scanning the block address space cyclically. Never inspects
    /// valid counts.
    pub fn select_victim(&mut self) -> Result<BlockId, GcError> {
        let n = self.blocks.len() as BlockId;
        for step in 0..n {
            let id = (self.victim_cursor + step) % n;
            if self.blocks[id as usize].status == BlockStatus::Used {
                self.victim_cursor = (id + 1) % n;
                return Ok(id);
            }
        }
        Err(GcError::NothingToReclaim)
    }

    /// Erases a block back into the free pool.
    pub fn erase_block(&mut self, id: BlockId) {
        let b = &mut self.blocks[id as usize];
        debug_assert_eq!(b.valid_groups, 0, "erase of block {id} with valid groups");
        b.status = BlockStatus::Free;
        b.valid_groups = 0;
        b.erase_count += 1;
        self.free.push_back(id);
    }

    fn retire(&mut self, id: BlockId) {
        let b = &mut self.blocks[id as usize];
        b.status = BlockStatus::Retired;
        b.valid_groups = 0;
        b.erase_count += 1;
    }
}

/// Journaling policy: dump period plus the pages each block reserves for its
/// own metadata.
#[derive(Debug, Clone, Copy)]
pub struct JournalPolicy {
    /// `None` disables periodic dumps.
    pub period: Option<Ps>,
    pub metadata_pages_per_block: u32,
}

impl Default for JournalPolicy {
    fn default() -> Self {
        Self {
            period: Some(100 * crate::units::PS_PER_MS),
            metadata_pages_per_block: 2,
        }
    }
}

/// One valid-group move performed by a reclaim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub logical_group: u64,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReclaimOutcome {
    pub victim: BlockId,
    pub migrations: Vec<Migration>,
    pub erase_count: u32,
}

/// Size of one mapping-table dump, in page groups.
pub fn journal_dump_groups(fv: &Flashvisor) -> u64 {
    fv.table.byte_size().div_ceil(fv.geometry.page_group_size())
}

/// Storage-management actor state.
#[derive(Debug)]
pub struct Storengine {
    pub journal: JournalPolicy,
    last_dump: Ps,
}

impl Storengine {
    pub fn new(journal: JournalPolicy) -> Self {
        Self { journal, last_dump: 0 }
    }

    /// Emits a dump if a full period elapsed since the last one; a second
    /// tick within the same period is a no-op.
    pub fn journal_tick(&mut self, now: Ps, fv: &Flashvisor) -> Option<u64> {
        let period = self.journal.period?;
        if now < self.last_dump.saturating_add(period) {
            return None;
        }
        self.last_dump = now;
        Some(journal_dump_groups(fv))
    }

    pub fn next_journal_due(&self) -> Option<Ps> {
        self.journal.period.map(|p| self.last_dump.saturating_add(p))
    }

    /// Reclaims the victim: every valid group is rewritten at the current
    /// write cursor (mapping updated in table and block metadata), then the
    /// victim is erased back into the free pool.
    pub fn reclaim(fv: &mut Flashvisor, victim: BlockId) -> Result<ReclaimOutcome, GcError> {
        if fv.pool.block(victim).status != BlockStatus::Used {
            return Err(GcError::NotUsed(victim));
        }
        let migrations = Self::migrate_out(fv, victim).map_err(|_| GcError::Deadlock(victim))?;
        fv.pool.erase_block(victim);
        Ok(ReclaimOutcome {
            victim,
            migrations,
            erase_count: fv.pool.block(victim).erase_count,
        })
    }

    /// Permanently excludes a block, migrating whatever is still valid.
    /// Requires a spare free block to take the data.
    pub fn retire_bad_block(fv: &mut Flashvisor, block: BlockId) -> Result<ReclaimOutcome, GcError> {
        if fv.pool.block(block).status == BlockStatus::Retired {
            return Err(GcError::NotUsed(block));
        }
        if fv.pool.free.is_empty() && fv.pool.active.is_none() {
            return Err(GcError::RetireNoSpare(block));
        }
        // The destination allocator must not hand out groups from the block
        // being retired.
        if let Some((active, _)) = fv.pool.active {
            if active == block {
                let (id, _) = fv.pool.active.take().unwrap();
                fv.pool.blocks[id as usize].status = BlockStatus::Used;
            }
        }
        if let Some(pos) = fv.pool.free.iter().position(|b| *b == block) {
            fv.pool.free.remove(pos);
        }
        let migrations = Self::migrate_out(fv, block).map_err(|_| GcError::RetireNoSpare(block))?;
        fv.pool.retire(block);
        Ok(ReclaimOutcome {
            victim: block,
            migrations,
            erase_count: fv.pool.block(block).erase_count,
        })
    }

    fn migrate_out(fv: &mut Flashvisor, victim: BlockId) -> Result<Vec<Migration>, FlashError> {
        let gpb = fv.pool.groups_per_block() as u64;
        let base = fv.pool.first_group_of(victim);
        let mut migrations = Vec::new();
        for offset in 0..gpb {
            let from = (base + offset) as u32;
            let Some(logical) = fv.table.logical_of(from) else {
                continue;
            };
            let to = match fv.pool.allocate_group() {
                Ok(t) => t,
                Err(AllocError::NoFreeGroup) => return Err(FlashError::NeedsReclaim),
            };
            fv.table.migrate(logical, from, to);
            fv.pool.invalidate_group(from);
            migrations.push(Migration { logical_group: logical, from, to });
        }
        Ok(migrations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flashvisor::BackboneGeometry;
    use crate::units::{KIB, PS_PER_MS};

    /// 16 groups in 4 blocks of 4.
    fn mini_fv() -> Flashvisor {
        let geometry = BackboneGeometry {
            capacity: 16 * 64 * KIB,
            groups_per_block: 4,
            packages_per_channel: 1,
            dies_per_package: 1,
            over_provision_pct: 25.0,
            ..BackboneGeometry::default()
        };
        Flashvisor::new(geometry, 500_000_000).unwrap()
    }

    fn fill_blocks(fv: &mut Flashvisor, logicals: std::ops::Range<u64>) {
        for l in logicals {
            fv.translate_write_group(l).unwrap();
        }
    }

    #[test]
    fn victim_selection_is_cyclic() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..12); // blocks 0, 1, 2 used; block 3 free
        fv.pool.victim_cursor = 1;
        assert_eq!(fv.pool.select_victim().unwrap(), 1);
        assert_eq!(fv.pool.select_victim().unwrap(), 2);
        assert_eq!(fv.pool.select_victim().unwrap(), 0);
        assert_eq!(fv.pool.select_victim().unwrap(), 1);
    }

    #[test]
    fn empty_used_pool_is_nothing_to_reclaim() {
        let mut fv = mini_fv();
        assert_eq!(fv.pool.select_victim(), Err(GcError::NothingToReclaim));
    }

    #[test]
    fn reclaim_empty_victim_erases_without_migrations() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..4); // block 0 full
        for l in 0..4 {
            fv.translate_write_group(l).unwrap(); // supersede everything
        }
        assert_eq!(fv.pool.block(0).valid_groups, 0);
        let outcome = Storengine::reclaim(&mut fv, 0).unwrap();
        assert!(outcome.migrations.is_empty());
        assert_eq!(fv.pool.block(0).status, BlockStatus::Free);
        assert_eq!(fv.pool.block(0).erase_count, 1);
    }

    #[test]
    fn reclaim_migrates_valid_groups_consistently() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..4); // block 0: logicals 0..4
        fv.translate_write_group(1).unwrap(); // supersede one
        let before: Vec<_> = (0..4).map(|l| fv.table.lookup(l)).collect();
        let outcome = Storengine::reclaim(&mut fv, 0).unwrap();
        assert_eq!(outcome.migrations.len(), 3);
        for l in 0..4u64 {
            let now = fv.table.lookup(l).unwrap();
            if l == 1 {
                assert_eq!(Some(now), before[1].map(|_| now)); // still mapped, unmoved
            } else {
                assert_ne!(Some(now), before[l as usize], "logical {l} must move");
            }
        }
        assert!(fv.mapping_is_injective());
        assert_eq!(fv.pool.block(0).status, BlockStatus::Free);
    }

    #[test]
    fn write_with_no_free_group_stalls_then_completes_after_gc() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..8);
        for l in 0..4 {
            fv.translate_write_group(l).unwrap(); // block 0 all stale
        }
        fill_blocks(&mut fv, 8..12);
        // 16 groups allocated in total: everything is used now.
        assert_eq!(fv.pool.free_groups(), 0);
        assert!(matches!(fv.translate_write_group(12), Err(FlashError::NeedsReclaim)));
        let victim = fv.pool.select_victim().unwrap();
        assert_eq!(victim, 0);
        Storengine::reclaim(&mut fv, victim).unwrap();
        assert!(fv.pool.free_groups() > 0);
        fv.translate_write_group(12).unwrap();
    }

    #[test]
    fn gc_deadlock_when_no_destination() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..16); // every group valid, nothing free
        let victim = fv.pool.select_victim().unwrap();
        assert_eq!(Storengine::reclaim(&mut fv, victim), Err(GcError::Deadlock(victim)));
    }

    #[test]
    fn retire_empty_block_shrinks_pool() {
        let mut fv = mini_fv();
        let total = fv.pool.total_blocks();
        let outcome = Storengine::retire_bad_block(&mut fv, 3).unwrap();
        assert!(outcome.migrations.is_empty());
        assert_eq!(fv.pool.block(3).status, BlockStatus::Retired);
        assert_eq!(fv.pool.total_blocks(), total); // slots remain, block excluded
        assert!(fv.pool.free_groups() < total as u64 * 4);
    }

    #[test]
    fn retire_with_valid_groups_migrates_then_excludes() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..4);
        fv.translate_write_group(0).unwrap();
        fv.translate_write_group(2).unwrap();
        let outcome = Storengine::retire_bad_block(&mut fv, 0).unwrap();
        assert_eq!(outcome.migrations.len(), 2);
        assert!(fv.mapping_is_injective());
        assert_eq!(fv.pool.block(0).status, BlockStatus::Retired);
        for l in 0..4 {
            assert!(fv.table.lookup(l).is_some());
        }
    }

    #[test]
    fn retire_without_spare_fails() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..16);
        assert_eq!(
            Storengine::retire_bad_block(&mut fv, 0),
            Err(GcError::RetireNoSpare(0))
        );
    }

    #[test]
    fn journal_dump_size_and_period() {
        let fv = Flashvisor::new(BackboneGeometry::default(), 500_000_000).unwrap();
        let mut se = Storengine::new(JournalPolicy::default());
        // 2 MiB table over 64 KiB groups = 32 group writes per dump.
        assert_eq!(se.journal_tick(100 * PS_PER_MS, &fv), Some(32));
        // Second tick within one period is a no-op.
        assert_eq!(se.journal_tick(150 * PS_PER_MS, &fv), None);
        assert_eq!(se.journal_tick(200 * PS_PER_MS, &fv), Some(32));

        let mut off = Storengine::new(JournalPolicy { period: None, ..JournalPolicy::default() });
        assert_eq!(off.journal_tick(u64::MAX / 2, &fv), None);
    }

    #[test]
    fn round_robin_fairness_over_full_cycles() {
        let mut fv = mini_fv();
        fill_blocks(&mut fv, 0..12); // blocks 0..3 used
        let mut counts = [0u32; 3];
        for _ in 0..9 {
            let v = fv.pool.select_victim().unwrap();
            counts[v as usize] += 1;
        }
        assert_eq!(counts, [3, 3, 3]);
    }
}
