//! Kernel scheduling over the worker LWP pool.
//!
//! Four policies share one state machine: the inter-kernel schedulers bind
//! whole kernels to single LWPs (statically by application number, or
//! dynamically to any free worker), the intra-kernel schedulers distribute
//! screens across workers (in-order one kernel at a time, or out-of-order
//! borrowing screens across kernel and application boundaries). The
//! multi-app execution chain enforces microblock ordering for all of them.

pub mod audit;
pub mod timeline;

use std::collections::VecDeque;
use thiserror::Error;

/// Worker index within the scheduling pool. The two management LWPs
/// (Flashvisor, Storengine) are never part of the pool.
pub type LwpId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    InterSt,
    InterDy,
    IntraIo,
    IntraO3,
    /// Host-driven reference configuration: data-parallel waves on the
    /// baseline datapath. Scheduling behaves like `IntraIo`.
    Simd,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::InterSt => "interst",
            PolicyKind::InterDy => "interdy",
            PolicyKind::IntraIo => "intraio",
            PolicyKind::IntraO3 => "intrao3",
            PolicyKind::Simd => "simd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interst" => Some(PolicyKind::InterSt),
            "interdy" => Some(PolicyKind::InterDy),
            "intraio" => Some(PolicyKind::IntraIo),
            "intrao3" => Some(PolicyKind::IntraO3),
            "simd" => Some(PolicyKind::Simd),
            _ => None,
        }
    }

    /// The four accelerator-side schedulers (`--policy all`).
    pub fn schedulers() -> [PolicyKind; 4] {
        [PolicyKind::InterSt, PolicyKind::InterDy, PolicyKind::IntraIo, PolicyKind::IntraO3]
    }

    fn scheduling_semantics(&self) -> PolicyKind {
        match self {
            PolicyKind::Simd => PolicyKind::IntraIo,
            other => *other,
        }
    }

    fn is_inter(&self) -> bool {
        matches!(self.scheduling_semantics(), PolicyKind::InterSt | PolicyKind::InterDy)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Policy plus the worker pool it dispatches onto.
#[derive(Debug, Clone)]
pub struct SchedulerPolicy {
    pub kind: PolicyKind,
    pub worker_pool: Vec<LwpId>,
}

impl SchedulerPolicy {
    pub fn new(kind: PolicyKind, workers: u32) -> Self {
        assert!(workers > 0, "worker pool must be non-empty");
        Self {
            kind,
            worker_pool: (0..workers).collect(),
        }
    }
}

/// Static shape of one schedulable kernel instance.
#[derive(Debug, Clone)]
pub struct KernelShape {
    pub app_id: u32,
    pub kernel_id: u32,
    pub instance: u32,
    /// Screen count per microblock, in dependency order.
    pub screens_per_mblk: Vec<u32>,
}

impl KernelShape {
    pub fn total_screens(&self) -> usize {
        self.screens_per_mblk.iter().map(|n| *n as usize).sum()
    }
}

/// Position of one screen within the run's kernel-instance list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScreenAddr {
    pub kernel: usize,
    pub mblk: u32,
    pub screen: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreenStatus {
    Pending,
    Running,
    Done,
}

/// Per-screen record of a chain node: status plus the LWP executing it.
#[derive(Debug, Clone, Copy)]
pub struct ScreenRecord {
    pub status: ScreenStatus,
    pub assigned_lwp: Option<LwpId>,
}

/// One microblock's entry in the execution chain.
#[derive(Debug, Clone)]
pub struct ChainNode {
    pub mblk: u32,
    pub screens: Vec<ScreenRecord>,
}

impl ChainNode {
    fn all_done(&self) -> bool {
        self.screens.iter().all(|s| s.status == ScreenStatus::Done)
    }
}

#[derive(Debug)]
struct KernelChain {
    app_id: u32,
    nodes: Vec<ChainNode>,
    /// Earliest node that is not done; nodes beyond it may not run.
    frontier: usize,
    remaining: usize,
    arrived: bool,
}

impl KernelChain {
    fn complete(&self) -> bool {
        self.remaining == 0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolViolation {
    #[error("completion reported for screen that is not running (kernel {kernel}, mblk {mblk}, screen {screen})")]
    NotRunning { kernel: usize, mblk: u32, screen: u32 },
    #[error("completion reported from lwp {got}, screen runs on {expected:?}")]
    WrongLwp { got: LwpId, expected: Option<LwpId> },
    #[error("dispatch of kernel {0} before its arrival")]
    NotArrived(usize),
}

/// Screen dispatch decision: which worker takes which screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub lwp: LwpId,
    pub screen: ScreenAddr,
}

/// Per-application dependency lists: one node per microblock, concatenated in
/// kernel order under the application's root pointer.
#[derive(Debug)]
pub struct MultiAppExecutionChain {
    kernels: Vec<KernelChain>,
    /// Root: kernel-instance lists per application, in kernel order.
    app_lists: Vec<(u32, Vec<usize>)>,
}

impl MultiAppExecutionChain {
    pub fn new(shapes: &[KernelShape]) -> Self {
        let kernels = shapes
            .iter()
            .map(|s| KernelChain {
                app_id: s.app_id,
                nodes: s
                    .screens_per_mblk
                    .iter()
                    .enumerate()
                    .map(|(m, n)| ChainNode {
                        mblk: m as u32,
                        screens: vec![
                            ScreenRecord {
                                status: ScreenStatus::Pending,
                                assigned_lwp: None
                            };
                            *n as usize
                        ],
                    })
                    .collect(),
                frontier: 0,
                remaining: s.total_screens(),
                arrived: false,
            })
            .collect::<Vec<_>>();
        let mut app_lists: Vec<(u32, Vec<usize>)> = Vec::new();
        for (idx, shape) in shapes.iter().enumerate() {
            match app_lists.iter_mut().find(|(a, _)| *a == shape.app_id) {
                Some((_, list)) => list.push(idx),
                None => app_lists.push((shape.app_id, vec![idx])),
            }
        }
        Self { kernels, app_lists }
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn app_root(&self) -> &[(u32, Vec<usize>)] {
        &self.app_lists
    }

    pub fn node(&self, kernel: usize, mblk: u32) -> &ChainNode {
        &self.kernels[kernel].nodes[mblk as usize]
    }

    pub fn frontier(&self, kernel: usize) -> usize {
        self.kernels[kernel].frontier
    }

    pub fn kernel_complete(&self, kernel: usize) -> bool {
        self.kernels[kernel].complete()
    }

    pub fn app_complete(&self, app_id: u32) -> bool {
        self.app_lists
            .iter()
            .find(|(a, _)| *a == app_id)
            .map(|(_, ks)| ks.iter().all(|k| self.kernels[*k].complete()))
            .unwrap_or(true)
    }

    fn mark_running(&mut self, addr: ScreenAddr, lwp: LwpId) {
        let rec = &mut self.kernels[addr.kernel].nodes[addr.mblk as usize].screens[addr.screen as usize];
        debug_assert_eq!(rec.status, ScreenStatus::Pending);
        rec.status = ScreenStatus::Running;
        rec.assigned_lwp = Some(lwp);
    }

    /// Marks the screen done; advances the kernel frontier past every
    /// completed node. Reports a protocol violation for completions of
    /// screens that are not running on the claimed LWP.
    pub fn notify_completion(&mut self, lwp: LwpId, addr: ScreenAddr) -> Result<(), ProtocolViolation> {
        let chain = &mut self.kernels[addr.kernel];
        let rec = &mut chain.nodes[addr.mblk as usize].screens[addr.screen as usize];
        if rec.status != ScreenStatus::Running {
            return Err(ProtocolViolation::NotRunning {
                kernel: addr.kernel,
                mblk: addr.mblk,
                screen: addr.screen,
            });
        }
        if rec.assigned_lwp != Some(lwp) {
            return Err(ProtocolViolation::WrongLwp {
                got: lwp,
                expected: rec.assigned_lwp,
            });
        }
        rec.status = ScreenStatus::Done;
        chain.remaining -= 1;
        while chain.frontier < chain.nodes.len() && chain.nodes[chain.frontier].all_done() {
            chain.frontier += 1;
        }
        Ok(())
    }

    /// Pending screens of the kernel's frontier microblock, in screen order.
    fn pending_frontier_screens(&self, kernel: usize) -> Vec<ScreenAddr> {
        let chain = &self.kernels[kernel];
        if !chain.arrived || chain.complete() {
            return Vec::new();
        }
        let node = &chain.nodes[chain.frontier];
        node.screens
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == ScreenStatus::Pending)
            .map(|(s, _)| ScreenAddr {
                kernel,
                mblk: node.mblk,
                screen: s as u32,
            })
            .collect()
    }

    /// Next screen in serialized (node, screen) order; used by the
    /// inter-kernel policies that run a kernel whole on one LWP.
    fn next_serial_screen(&self, kernel: usize) -> Option<ScreenAddr> {
        let chain = &self.kernels[kernel];
        for node in &chain.nodes[chain.frontier.min(chain.nodes.len().saturating_sub(1))..] {
            for (s, rec) in node.screens.iter().enumerate() {
                match rec.status {
                    ScreenStatus::Pending => {
                        return Some(ScreenAddr {
                            kernel,
                            mblk: node.mblk,
                            screen: s as u32,
                        })
                    }
                    ScreenStatus::Running => return None,
                    ScreenStatus::Done => {}
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LwpState {
    Idle,
    Busy(ScreenAddr),
}

/// The scheduling state machine. The event loop calls `on_arrival` and
/// `on_completion`; both return the dispatches the policy makes at that
/// instant. Pure function of (chain, idle set) plus the FIFO queues, so
/// identical inputs replay identical dispatch traces.
#[derive(Debug)]
pub struct Scheduler {
    policy: SchedulerPolicy,
    chain: MultiAppExecutionChain,
    lwps: Vec<LwpState>,
    /// Arrived-and-unbound kernels, oldest first (InterDy).
    pending: VecDeque<usize>,
    /// Static per-LWP kernel queues (InterSt).
    bound_queue: Vec<VecDeque<usize>>,
    /// Kernel currently serialized on each LWP (inter policies).
    current: Vec<Option<usize>>,
    /// Kernel instances in arrival order (intra policies).
    arrival_order: Vec<usize>,
}

impl Scheduler {
    pub fn new(shapes: &[KernelShape], policy: SchedulerPolicy) -> Self {
        let workers = policy.worker_pool.len();
        Self {
            policy,
            chain: MultiAppExecutionChain::new(shapes),
            lwps: vec![LwpState::Idle; workers],
            pending: VecDeque::new(),
            bound_queue: vec![VecDeque::new(); workers],
            current: vec![None; workers],
            arrival_order: Vec::new(),
        }
    }

    pub fn chain(&self) -> &MultiAppExecutionChain {
        &self.chain
    }

    pub fn workers(&self) -> u32 {
        self.lwps.len() as u32
    }

    pub fn all_complete(&self) -> bool {
        (0..self.chain.kernel_count()).all(|k| !self.chain.kernels[k].arrived || self.chain.kernel_complete(k))
    }

    pub fn idle_lwps(&self) -> Vec<LwpId> {
        self.lwps
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == LwpState::Idle)
            .map(|(i, _)| i as LwpId)
            .collect()
    }

    /// A kernel finished its offload protocol and is now schedulable. Call
    /// `poll` after all state changes of the instant are applied.
    pub fn on_arrival(&mut self, kernel: usize) {
        self.chain.kernels[kernel].arrived = true;
        self.arrival_order.push(kernel);
        match self.policy.kind.scheduling_semantics() {
            PolicyKind::InterSt => {
                let lwp = self.static_lwp_for(self.chain.kernels[kernel].app_id);
                self.bound_queue[lwp as usize].push_back(kernel);
            }
            PolicyKind::InterDy => self.pending.push_back(kernel),
            _ => {}
        }
    }

    /// Static mapping: application number modulo pool size.
    pub fn static_lwp_for(&self, app_id: u32) -> LwpId {
        app_id % self.lwps.len() as u32
    }

    /// A worker reported a screen completion through the hardware queue.
    /// Dispatch decisions are made by the instant's `poll`.
    pub fn on_completion(&mut self, lwp: LwpId, addr: ScreenAddr) -> Result<(), ProtocolViolation> {
        if self.lwps[lwp as usize] != LwpState::Busy(addr) {
            return Err(ProtocolViolation::WrongLwp {
                got: lwp,
                expected: match self.lwps[lwp as usize] {
                    LwpState::Busy(other) => self.chain.kernels[other.kernel].nodes[other.mblk as usize]
                        .screens[other.screen as usize]
                        .assigned_lwp,
                    LwpState::Idle => None,
                },
            });
        }
        self.chain.notify_completion(lwp, addr)?;
        self.lwps[lwp as usize] = LwpState::Idle;
        if self.policy.kind.is_inter() && self.chain.kernel_complete(addr.kernel) {
            let slot = &mut self.current[lwp as usize];
            if *slot == Some(addr.kernel) {
                *slot = None;
            }
        }
        Ok(())
    }

    /// Computes every dispatch the policy makes against the current idle set.
    pub fn poll(&mut self) -> Vec<Dispatch> {
        let mut out = Vec::new();
        loop {
            let before = out.len();
            match self.policy.kind.scheduling_semantics() {
                PolicyKind::InterSt => self.poll_inter_static(&mut out),
                PolicyKind::InterDy => self.poll_inter_dynamic(&mut out),
                PolicyKind::IntraIo => self.poll_intra_inorder(&mut out),
                PolicyKind::IntraO3 => self.poll_intra_ooo(&mut out),
                PolicyKind::Simd => unreachable!(),
            }
            if out.len() == before {
                break;
            }
        }
        out
    }

    fn dispatch_to(&mut self, lwp: LwpId, addr: ScreenAddr, out: &mut Vec<Dispatch>) {
        debug_assert_eq!(self.lwps[lwp as usize], LwpState::Idle);
        self.chain.mark_running(addr, lwp);
        self.lwps[lwp as usize] = LwpState::Busy(addr);
        out.push(Dispatch { lwp, screen: addr });
    }

    fn poll_inter_static(&mut self, out: &mut Vec<Dispatch>) {
        for lwp in 0..self.lwps.len() as LwpId {
            if self.lwps[lwp as usize] != LwpState::Idle {
                continue;
            }
            if self.current[lwp as usize].is_none() {
                self.current[lwp as usize] = self.bound_queue[lwp as usize].pop_front();
            }
            let Some(kernel) = self.current[lwp as usize] else { continue };
            if let Some(addr) = self.chain.next_serial_screen(kernel) {
                self.dispatch_to(lwp, addr, out);
            }
        }
    }

    fn poll_inter_dynamic(&mut self, out: &mut Vec<Dispatch>) {
        for lwp in 0..self.lwps.len() as LwpId {
            if self.lwps[lwp as usize] != LwpState::Idle {
                continue;
            }
            if self.current[lwp as usize].is_none() {
                // Oldest pending kernel onto the lowest-index idle LWP.
                self.current[lwp as usize] = self.pending.pop_front();
            }
            let Some(kernel) = self.current[lwp as usize] else { continue };
            if let Some(addr) = self.chain.next_serial_screen(kernel) {
                self.dispatch_to(lwp, addr, out);
            }
        }
    }

    /// In-order intra-kernel scheduling: microblocks run in serial order, one
    /// kernel at a time, with the screens of the current microblock spread
    /// across the workers.
    fn poll_intra_inorder(&mut self, out: &mut Vec<Dispatch>) {
        let Some(&kernel) = self
            .arrival_order
            .iter()
            .find(|k| !self.chain.kernel_complete(**k))
        else {
            return;
        };
        self.fill_idle_from(kernel, out);
    }

    /// Out-of-order intra-kernel scheduling: idle LWPs take pending screens
    /// from any arrived kernel's frontier microblock, earliest application
    /// and kernel first.
    fn poll_intra_ooo(&mut self, out: &mut Vec<Dispatch>) {
        let order = self.arrival_order.clone();
        for kernel in order {
            if self.chain.kernel_complete(kernel) {
                continue;
            }
            self.fill_idle_from(kernel, out);
            if self.idle_lwps().is_empty() {
                return;
            }
        }
    }

    fn fill_idle_from(&mut self, kernel: usize, out: &mut Vec<Dispatch>) {
        let screens = self.chain.pending_frontier_screens(kernel);
        let idle = self.idle_lwps();
        for (addr, lwp) in screens.into_iter().zip(idle) {
            self.dispatch_to(lwp, addr, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(app: u32, kernel: u32, screens: &[u32]) -> KernelShape {
        KernelShape {
            app_id: app,
            kernel_id: kernel,
            instance: 0,
            screens_per_mblk: screens.to_vec(),
        }
    }

    fn arrive_all(s: &mut Scheduler, n: usize) -> Vec<Dispatch> {
        for k in 0..n {
            s.on_arrival(k);
        }
        s.poll()
    }

    fn complete(s: &mut Scheduler, d: Dispatch) -> Vec<Dispatch> {
        s.on_completion(d.lwp, d.screen).expect("valid completion");
        s.poll()
    }

    #[test]
    fn static_mapping_is_app_mod_pool() {
        let shapes: Vec<_> = (0..6).map(|a| shape(a, 0, &[1])).collect();
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::InterSt, 6));
        let dispatches = arrive_all(&mut s, 6);
        // Six applications on six workers: a bijective assignment.
        let mut lwps: Vec<_> = dispatches.iter().map(|d| d.lwp).collect();
        lwps.sort_unstable();
        assert_eq!(lwps, vec![0, 1, 2, 3, 4, 5]);
        for d in &dispatches {
            assert_eq!(d.lwp, shapes[d.screen.kernel].app_id % 6);
        }
    }

    #[test]
    fn static_queues_same_app_fifo() {
        // App0 {k0, k1}, App2 {k2, k3} on 4 workers: everything serializes on
        // LWP0 and LWP2, workers 1 and 3 stay idle.
        let shapes = vec![
            shape(0, 0, &[2]),
            shape(0, 1, &[2]),
            shape(2, 0, &[3]),
            shape(2, 1, &[3]),
        ];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::InterSt, 4));
        let d = arrive_all(&mut s, 4);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].lwp, 0);
        assert_eq!(d[0].screen.kernel, 0);
        assert_eq!(d[1].lwp, 2);
        assert_eq!(d[1].screen.kernel, 2);
        assert_eq!(s.idle_lwps(), vec![1, 3]);
    }

    #[test]
    fn dynamic_spreads_over_idle_workers() {
        let shapes = vec![
            shape(0, 0, &[2]),
            shape(0, 1, &[2]),
            shape(2, 0, &[3]),
            shape(2, 1, &[3]),
        ];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::InterDy, 4));
        let d = arrive_all(&mut s, 4);
        let placed: Vec<_> = d.iter().map(|x| (x.screen.kernel, x.lwp)).collect();
        assert_eq!(placed, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn inorder_runs_one_kernel_at_a_time() {
        // First kernel's serial microblock leaves workers idle rather than
        // starting the second kernel.
        let shapes = vec![shape(0, 0, &[1, 4]), shape(1, 0, &[4])];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::IntraIo, 4));
        let d = arrive_all(&mut s, 2);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].screen, ScreenAddr { kernel: 0, mblk: 0, screen: 0 });
        assert_eq!(s.idle_lwps().len(), 3);
    }

    #[test]
    fn ooo_borrows_across_kernels() {
        let shapes = vec![shape(0, 0, &[1, 4]), shape(1, 0, &[4])];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::IntraO3, 4));
        let d = arrive_all(&mut s, 2);
        // k0's serial screen plus three borrowed screens of k1.
        assert_eq!(d.len(), 4);
        assert_eq!(d[0].screen.kernel, 0);
        assert!(d[1..].iter().all(|x| x.screen.kernel == 1));
        assert!(s.idle_lwps().is_empty());
    }

    #[test]
    fn frontier_blocks_next_microblock() {
        let shapes = vec![shape(0, 0, &[2, 1])];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::IntraO3, 4));
        let d = arrive_all(&mut s, 1);
        assert_eq!(d.len(), 2);
        // Completing one of two screens must not unlock microblock 1.
        let more = complete(&mut s, d[0]);
        assert!(more.is_empty());
        assert_eq!(s.chain().frontier(0), 0);
        let more = complete(&mut s, d[1]);
        assert_eq!(more.len(), 1);
        assert_eq!(more[0].screen.mblk, 1);
        assert_eq!(s.chain().frontier(0), 1);
    }

    #[test]
    fn double_completion_is_protocol_violation() {
        let shapes = vec![shape(0, 0, &[1])];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::InterDy, 2));
        let d = arrive_all(&mut s, 1);
        complete(&mut s, d[0]);
        let err = s.on_completion(d[0].lwp, d[0].screen).unwrap_err();
        assert!(matches!(err, ProtocolViolation::WrongLwp { .. } | ProtocolViolation::NotRunning { .. }));
    }

    #[test]
    fn completion_marks_application_finished() {
        let shapes = vec![shape(0, 0, &[1]), shape(0, 1, &[1])];
        let mut s = Scheduler::new(&shapes, SchedulerPolicy::new(PolicyKind::InterDy, 2));
        let d = arrive_all(&mut s, 2);
        assert!(!s.chain().app_complete(0));
        complete(&mut s, d[0]);
        complete(&mut s, d[1]);
        assert!(s.chain().app_complete(0));
        assert!(s.all_complete());
    }

    #[test]
    fn chain_root_has_one_list_per_app() {
        let shapes = vec![shape(0, 0, &[1]), shape(2, 0, &[1]), shape(0, 1, &[2])];
        let chain = MultiAppExecutionChain::new(&shapes);
        let root = chain.app_root();
        assert_eq!(root.len(), 2);
        assert_eq!(root[0], (0, vec![0, 2]));
        assert_eq!(root[1], (2, vec![1]));
    }
}
