//! Property tests: the range-lock tree against a naive interval-list oracle,
//! and grammar round-trips for generated workloads.

use abacus_sim::flashvisor::{conflicts, LockId, LockKind, LockOwner, PageSpan, RangeLockTree};
use abacus_sim::workload::{
    parse_workload, preset_from_table, serialize_workload, MixClass, ValidationLimits, WorkloadMix,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum LockOp {
    Acquire { start: u64, len: u64, write: bool, owner: u64 },
    ReleaseOldest,
}

fn lock_op() -> impl Strategy<Value = LockOp> {
    prop_oneof![
        3 => (0u64..64, 1u64..16, any::<bool>(), 0u64..3).prop_map(|(start, len, write, owner)| {
            LockOp::Acquire { start, len, write, owner }
        }),
        2 => Just(LockOp::ReleaseOldest),
    ]
}

/// Naive oracle: a plain list of held locks, conflict checked by scanning.
#[derive(Default)]
struct NaiveLocks {
    held: Vec<(PageSpan, LockKind, LockOwner)>,
}

impl NaiveLocks {
    fn would_block(&self, span: PageSpan, kind: LockKind, owner: LockOwner) -> bool {
        self.held.iter().any(|(s, k, o)| {
            s.first <= span.last && span.first <= s.last && conflicts(kind, owner, *k, *o)
        })
    }
}

proptest! {
    #[test]
    fn lock_tree_matches_naive_oracle(ops in proptest::collection::vec(lock_op(), 1..120)) {
        let mut tree = RangeLockTree::new();
        let mut naive = NaiveLocks::default();
        let mut held: Vec<(LockId, usize)> = Vec::new(); // (tree id, naive index)
        for op in ops {
            match op {
                LockOp::Acquire { start, len, write, owner } => {
                    let span = PageSpan::new(start, start + len - 1);
                    let kind = if write { LockKind::WriteMap } else { LockKind::ReadMap };
                    let owner = LockOwner::Kernel(owner);
                    let expect_block = naive.would_block(span, kind, owner);
                    let got = tree.try_acquire(span, kind, owner);
                    prop_assert_eq!(got.is_none(), expect_block, "tree disagrees with oracle");
                    if let Some(id) = got {
                        naive.held.push((span, kind, owner));
                        held.push((id, naive.held.len() - 1));
                    }
                }
                LockOp::ReleaseOldest => {
                    if held.is_empty() {
                        continue;
                    }
                    let (id, naive_idx) = held.remove(0);
                    tree.release(id);
                    naive.held.remove(naive_idx);
                    for (_, idx) in &mut held {
                        if *idx > naive_idx {
                            *idx -= 1;
                        }
                    }
                }
            }
            prop_assert_eq!(tree.len(), naive.held.len());
        }
    }

    #[test]
    fn generated_applications_round_trip(
        input_mb in 1u64..256,
        bki in 1.0f64..100.0,
        ldst in 0.0f64..100.0,
        mblks in 1u32..5,
        serial in 0u32..5,
        screens in 1u32..7,
    ) {
        let serial = serial.min(mblks);
        let app = match preset_from_table("prop", input_mb, bki, ldst, mblks, serial, screens) {
            Ok(app) => app,
            // Tiny inputs with large B/KI can land below one instruction per
            // screen; that rejection is itself correct behavior.
            Err(_) => return Ok(()),
        };
        let mix = WorkloadMix {
            name: "prop".into(),
            classification: MixClass::Mixed,
            applications: vec![app],
        };
        let limits = ValidationLimits::default();
        prop_assert!(mix.validate(&limits).is_ok());
        let text = serialize_workload(&mix);
        let back = parse_workload(&text, &limits).unwrap();
        prop_assert_eq!(back, mix);
    }
}
