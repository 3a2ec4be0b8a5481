//! Shared helpers for the integration suites: an independent synchronous
//! step-oracle for the scheduling policies and a randomized instance
//! generator. The oracle deliberately shares no code with the production
//! scheduler; it recomputes policy timelines with plain loops over unit
//! screens so goldens can be frozen against it.

#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One kernel for the step oracle: owning app and screens per microblock.
#[derive(Debug, Clone)]
pub struct OracleKernel {
    pub app: u32,
    pub mblks: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePolicy {
    InterSt,
    InterDy,
    IntraIo,
    IntraO3,
}

/// Synchronous unit-step timeline: returns the step at which each kernel
/// completes. All kernels arrive at step 0.
pub fn step_oracle(policy: OraclePolicy, kernels: &[OracleKernel], workers: usize) -> Vec<u32> {
    let n = kernels.len();
    // Progress per kernel: (frontier mblk, screens done inside it).
    let mut progress = vec![(0usize, 0u32); n];
    let mut completion = vec![0u32; n];
    let complete = |p: &(usize, u32), k: &OracleKernel| p.0 >= k.mblks.len();
    let remaining_total = |p: &(usize, u32), k: &OracleKernel| -> u32 {
        if complete(p, k) {
            0
        } else {
            k.mblks[p.0] - p.1 + k.mblks[p.0 + 1..].iter().sum::<u32>()
        }
    };

    // Inter policies: kernel -> LWP binding; the kernel runs serialized.
    let mut bound: Vec<Option<usize>> = vec![None; workers];
    let mut static_queue: Vec<Vec<usize>> = vec![Vec::new(); workers];
    if policy == OraclePolicy::InterSt {
        for (k, kernel) in kernels.iter().enumerate() {
            static_queue[kernel.app as usize % workers].push(k);
        }
        for q in &mut static_queue {
            q.reverse(); // pop from the back
        }
    }
    let mut dyn_queue: Vec<usize> = (0..n).rev().collect();

    let mut step = 0u32;
    while progress
        .iter()
        .zip(kernels)
        .any(|(p, k)| !complete(p, k))
    {
        step += 1;
        // Decide what executes during this step, then apply it at step end.
        let mut executing: Vec<usize> = Vec::new(); // kernel index per slot
        match policy {
            OraclePolicy::InterSt | OraclePolicy::InterDy => {
                for w in 0..workers {
                    if bound[w].is_none() || complete(&progress[bound[w].unwrap()], &kernels[bound[w].unwrap()]) {
                        bound[w] = match policy {
                            OraclePolicy::InterSt => static_queue[w].pop(),
                            OraclePolicy::InterDy => dyn_queue.pop(),
                            _ => unreachable!(),
                        };
                    }
                    if let Some(k) = bound[w] {
                        executing.push(k); // one screen of its serial stream
                    }
                }
            }
            OraclePolicy::IntraIo => {
                // One kernel at a time, frontier screens spread over workers.
                if let Some(k) = (0..n).find(|k| !complete(&progress[*k], &kernels[*k])) {
                    let pending = kernels[k].mblks[progress[k].0] - progress[k].1;
                    for _ in 0..pending.min(workers as u32) {
                        executing.push(k);
                    }
                }
            }
            OraclePolicy::IntraO3 => {
                let mut free = workers as u32;
                for k in 0..n {
                    if free == 0 {
                        break;
                    }
                    if complete(&progress[k], &kernels[k]) {
                        continue;
                    }
                    let pending = kernels[k].mblks[progress[k].0] - progress[k].1;
                    let take = pending.min(free);
                    for _ in 0..take {
                        executing.push(k);
                    }
                    free -= take;
                }
            }
        }
        for k in executing {
            let (mblk, done) = progress[k];
            if done + 1 == kernels[k].mblks[mblk] {
                progress[k] = (mblk + 1, 0);
            } else {
                progress[k] = (mblk, done + 1);
            }
            if complete(&progress[k], &kernels[k]) {
                completion[k] = step;
            }
        }
        let _ = remaining_total;
        assert!(step < 100_000, "oracle did not terminate");
    }
    completion
}

/// The canonical inter-kernel scheduling scenario: App0{k0,k1}, App2{k2,k3},
/// serial kernels of 2/2/3/3 unit screens on four workers.
pub fn inter_scenario() -> Vec<OracleKernel> {
    vec![
        OracleKernel { app: 0, mblks: vec![2] },
        OracleKernel { app: 0, mblks: vec![2] },
        OracleKernel { app: 2, mblks: vec![3] },
        OracleKernel { app: 2, mblks: vec![3] },
    ]
}

/// The canonical intra-kernel scenario: App0{k0:[2,2], k1:[1,1,1]},
/// App2{k2:[4,4], k3:[4]} on four workers.
pub fn intra_scenario() -> Vec<OracleKernel> {
    vec![
        OracleKernel { app: 0, mblks: vec![2, 2] },
        OracleKernel { app: 0, mblks: vec![1, 1, 1] },
        OracleKernel { app: 2, mblks: vec![4, 4] },
        OracleKernel { app: 2, mblks: vec![4] },
    ]
}

/// Randomized flash-translation workload checked against a shadow map.
pub mod ftl {
    use abacus_sim::flashvisor::{BackboneGeometry, FlashError, Flashvisor};
    use abacus_sim::storengine::{GcError, JournalPolicy, Migration, Storengine};
    use abacus_sim::units::{KIB, PS_PER_MS};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// 64 groups in 8 blocks; 30% over-provisioning reserves 3 blocks,
    /// leaving 40 addressable groups and headroom to survive a retirement.
    pub fn mini_geometry() -> BackboneGeometry {
        BackboneGeometry {
            capacity: 64 * 64 * KIB,
            groups_per_block: 8,
            packages_per_channel: 2,
            dies_per_package: 1,
            over_provision_pct: 30.0,
            ..BackboneGeometry::default()
        }
    }

    pub struct ShadowState {
        /// logical group -> version of its latest write
        pub shadow: HashMap<u64, u64>,
        /// physical group -> (logical group, version) of the data stored there
        pub content: HashMap<u32, (u64, u64)>,
    }

    impl ShadowState {
        pub fn new() -> Self {
            Self {
                shadow: HashMap::new(),
                content: HashMap::new(),
            }
        }

        pub fn apply_migrations(&mut self, migrations: &[Migration]) {
            for m in migrations {
                let v = self
                    .content
                    .remove(&m.from)
                    .unwrap_or_else(|| panic!("migration of untracked group {}", m.from));
                assert_eq!(v.0, m.logical_group, "migration moved the wrong logical group");
                self.content.insert(m.to, v);
            }
        }

        pub fn verify(&self, fv: &Flashvisor) {
            for (logical, version) in &self.shadow {
                let phys = fv
                    .table
                    .lookup(*logical)
                    .unwrap_or_else(|| panic!("logical {logical} lost its mapping"));
                let got = self
                    .content
                    .get(&phys)
                    .unwrap_or_else(|| panic!("physical {phys} holds no tracked data"));
                assert_eq!(
                    got,
                    &(*logical, *version),
                    "logical {logical} resolved to stale or foreign data"
                );
            }
            assert!(fv.mapping_is_injective(), "mapping lost injectivity");
        }
    }

    /// One round-robin reclaim, deferring victims too valid to migrate with
    /// the current headroom (the storage manager's discipline).
    pub fn reclaim_once(fv: &mut Flashvisor, st: &mut ShadowState) -> bool {
        let candidates = fv.pool.used_blocks().count();
        for _ in 0..candidates {
            match fv.pool.select_victim() {
                Ok(victim) => {
                    if fv.pool.block(victim).valid_groups as u64 > fv.pool.free_groups() {
                        continue;
                    }
                    let outcome = Storengine::reclaim(fv, victim).expect("reclaim with headroom");
                    st.apply_migrations(&outcome.migrations);
                    return true;
                }
                Err(GcError::NothingToReclaim) => return false,
                Err(e) => panic!("unexpected reclaim failure: {e}"),
            }
        }
        false
    }

    /// Foreground writes keep one block of headroom reserved for migration;
    /// reclaims run on demand below the floor.
    pub fn checked_write(fv: &mut Flashvisor, st: &mut ShadowState, logical: u64, version: u64) -> u64 {
        let floor = fv.pool.groups_per_block() as u64;
        let mut reclaims = 0;
        loop {
            while fv.pool.free_groups() <= floor {
                assert!(reclaim_once(fv, st), "write stalled with nothing to reclaim");
                reclaims += 1;
            }
            let old = fv.table.lookup(logical);
            match fv.translate_write_group(logical) {
                Ok(phys) => {
                    if let Some(o) = old {
                        st.content.remove(&o);
                    }
                    st.content.insert(phys, (logical, version));
                    st.shadow.insert(logical, version);
                    return reclaims;
                }
                Err(FlashError::NeedsReclaim) => {
                    assert!(reclaim_once(fv, st), "write stalled with nothing to reclaim");
                    reclaims += 1;
                }
                Err(e) => panic!("write failed: {e}"),
            }
        }
    }

    pub struct FtlStats {
        pub ops: u64,
        pub reclaims: u64,
        pub journal_ticks: u64,
        pub retired: u64,
    }

    /// The full randomized interleaving: writes, reads, explicit reclaims,
    /// journal ticks, snapshot round-trips and one retirement, verified
    /// against the shadow map throughout.
    pub fn run_randomized(ops: u64, seed: u64) -> FtlStats {
        let geometry = mini_geometry();
        let addressable = geometry.addressable_groups();
        let mut fv = Flashvisor::new(geometry.clone(), 500_000_000).unwrap();
        let mut se = Storengine::new(JournalPolicy::default());
        let mut st = ShadowState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut version = 0u64;
        let mut stats = FtlStats {
            ops,
            reclaims: 0,
            journal_ticks: 0,
            retired: 0,
        };
        for op in 0..ops {
            let now = op * PS_PER_MS;
            match rng.gen_range(0..100) {
                0..=69 => {
                    let logical = rng.gen_range(0..addressable);
                    version += 1;
                    stats.reclaims += checked_write(&mut fv, &mut st, logical, version);
                }
                70..=89 => {
                    let logical = rng.gen_range(0..addressable);
                    match fv.translate_read_group(logical) {
                        Ok(loc) => {
                            let phys = fv.table.lookup(logical).unwrap() as u64;
                            assert_eq!(loc.package_index as u64, phys / geometry.pages_per_package());
                            assert_eq!(loc.physical_page, phys % geometry.pages_per_package());
                            let (l, v) = st.content[&(phys as u32)];
                            assert_eq!((l, v), (logical, st.shadow[&logical]));
                        }
                        Err(FlashError::NotFound(_)) => {
                            assert!(!st.shadow.contains_key(&logical), "mapped group reported missing");
                        }
                        Err(e) => panic!("read failed: {e}"),
                    }
                }
                90..=95 => {
                    if reclaim_once(&mut fv, &mut st) {
                        stats.reclaims += 1;
                    }
                }
                96..=97 => {
                    if se.journal_tick(now, &fv).is_some() {
                        stats.journal_ticks += 1;
                    }
                }
                _ => {
                    let snap = fv.export_snapshot();
                    let mut fresh = Flashvisor::new(geometry.clone(), 500_000_000).unwrap();
                    fresh.import_snapshot(&snap).unwrap();
                    for logical in 0..addressable {
                        assert_eq!(fresh.table.lookup(logical), fv.table.lookup(logical));
                    }
                }
            }
            if op % 500 == 0 {
                assert!(fv.mapping_is_injective(), "injectivity broken at op {op}");
            }
            if op % 25_000 == 24_999 && stats.retired < 1 {
                let candidate = fv.pool.used_blocks().next();
                if let Some(block) = candidate {
                    let outcome = Storengine::retire_bad_block(&mut fv, block).expect("spare available");
                    st.apply_migrations(&outcome.migrations);
                    stats.retired += 1;
                }
            }
        }
        st.verify(&fv);
        stats
    }
}

/// Random small instance for the property suites: uniform screen budget per
/// kernel, random microblock structure.
pub struct RandomInstance {
    pub workers: u32,
    pub shapes: Vec<abacus_sim::sched::KernelShape>,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> RandomInstance {
    let workers = rng.gen_range(2..=6);
    let apps = rng.gen_range(1..=4u32);
    let screens_per_kernel = rng.gen_range(1..=8u32);
    let mut shapes = Vec::new();
    for app in 0..apps {
        let kernels = rng.gen_range(1..=3u32);
        for kernel in 0..kernels {
            let mut remaining = screens_per_kernel;
            let mut mblks = Vec::new();
            while remaining > 0 {
                let take = rng.gen_range(1..=remaining);
                mblks.push(take);
                remaining -= take;
            }
            shapes.push(abacus_sim::sched::KernelShape {
                app_id: app,
                kernel_id: kernel,
                instance: 0,
                screens_per_mblk: mblks,
            });
        }
    }
    RandomInstance { workers, shapes }
}
