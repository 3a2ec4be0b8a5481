//! The event-driven core: expands a workload into kernel instances, drives
//! the offload protocol, scheduler, flash virtualization and storage
//! management to quiescence, and collects the report.
//!
//! Shared hardware (links, DDR3L, flash die rows) is modeled as FIFO serial
//! resources: a request reserves the resource from `max(now, free)` for its
//! duration, so contention appears as queuing delay and every run replays
//! bit-identically.

use super::event::{Component, EventKind, EventTimeline, Resource, TraceEvent};
use super::params::HardwareParams;
use super::{GcRecord, KernelRecord, Mode, SimError, SimulationReport};
use crate::flashvisor::{FlashError, Flashvisor, LockId, LockKind, LockOwner, PageSpan};
use crate::sched::audit::{DispatchRecord, RecordKind};
use crate::sched::{Dispatch, KernelShape, PolicyKind, Scheduler, SchedulerPolicy, ScreenAddr};
use crate::storengine::{BlockId, GcError, JournalPolicy, Storengine};
use crate::units::{compute_ps, transfer_ps, Ps};
use crate::workload::{ByteRange, WorkloadMix};
use std::collections::{HashMap, HashSet, VecDeque};

/// One screen of an expanded kernel instance.
#[derive(Debug, Clone)]
pub struct InstanceScreen {
    pub instructions: u64,
    pub ldst_ratio: f64,
    pub input: ByteRange,
    pub output: ByteRange,
}

/// A schedulable kernel instance with its own disjoint flash ranges.
#[derive(Debug, Clone)]
pub struct Instance {
    pub shape: KernelShape,
    pub screens: Vec<Vec<InstanceScreen>>,
    pub descriptor_bytes: u64,
}

/// Expands applications into kernel instances: per application, instance i
/// shifts every flash range by i times the application's stride.
pub fn expand_instances(mix: &WorkloadMix, page_group_size: u64) -> Vec<Instance> {
    let mut out = Vec::new();
    for app in &mix.applications {
        let stride = app.instance_stride(page_group_size);
        for inst in 0..app.instance_count {
            let shift = stride * inst as u64;
            for kernel in &app.kernels {
                let screens: Vec<Vec<InstanceScreen>> = kernel
                    .microblocks
                    .iter()
                    .map(|m| {
                        m.screens
                            .iter()
                            .map(|s| InstanceScreen {
                                instructions: s.compute_instructions,
                                ldst_ratio: s.ldst_ratio,
                                input: s.input_range.shifted(shift),
                                output: s.output_range.shifted(shift),
                            })
                            .collect()
                    })
                    .collect();
                out.push(Instance {
                    shape: KernelShape {
                        app_id: app.app_id,
                        kernel_id: kernel.kernel_id,
                        instance: inst,
                        screens_per_mblk: kernel.microblocks.iter().map(|m| m.screens.len() as u32).collect(),
                    },
                    screens,
                    descriptor_bytes: kernel.section_table.text,
                });
            }
        }
    }
    out
}

fn fnv64(h: &mut u64, bytes: &[u8]) {
    for b in bytes {
        *h ^= *b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

fn workload_digest(name: &str, instances: &[Instance]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    fnv64(&mut h, name.as_bytes());
    for inst in instances {
        fnv64(&mut h, &inst.shape.app_id.to_le_bytes());
        fnv64(&mut h, &inst.shape.kernel_id.to_le_bytes());
        fnv64(&mut h, &inst.shape.instance.to_le_bytes());
        for mblk in &inst.screens {
            for s in mblk {
                fnv64(&mut h, &s.instructions.to_le_bytes());
                fnv64(&mut h, &s.input.start.to_le_bytes());
                fnv64(&mut h, &s.input.len.to_le_bytes());
                fnv64(&mut h, &s.output.start.to_le_bytes());
                fnv64(&mut h, &s.output.len.to_le_bytes());
            }
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrival(usize),
    InputService(ScreenAddr),
    ComputeDone(ScreenAddr),
    OutputService(ScreenAddr),
    OutputDone(ScreenAddr),
    FlushDone(ScreenAddr),
    GcStep,
    GcErased,
}

#[derive(Debug, Clone, Copy)]
enum Cont {
    Input(ScreenAddr),
    Output(ScreenAddr),
    Gc,
}

#[derive(Debug)]
struct LockWaiter {
    span: PageSpan,
    kind: LockKind,
    owner: LockOwner,
    cont: Cont,
}

#[derive(Debug, Default)]
struct ScreenRun {
    lwp: u32,
    input_lock: Option<LockId>,
    output_lock: Option<LockId>,
    compute_dur: Ps,
    out_alloc: Vec<u32>,
}

#[derive(Debug)]
struct GcJob {
    victim: BlockId,
    next_offset: u64,
    migrated: u32,
    started: Ps,
    /// Lock target the job is waiting on (logical group, physical group).
    pending: Option<(u64, u32)>,
    /// Lock to release when the in-flight copy finishes.
    release_on_step: Option<LockId>,
}

struct Engine<'a> {
    params: &'a HardwareParams,
    mode: Mode,
    policy: PolicyKind,
    instances: Vec<Instance>,
    sched: Scheduler,
    timeline: EventTimeline<Ev>,
    trace_detail: bool,

    pcie: Resource,
    srio: Resource,
    ddr3l: Resource,
    lanes: Vec<Resource>,
    fv_lwp: Resource,
    ssd: Resource,
    host_cpu: Resource,

    fv: Option<Flashvisor>,
    se: Option<Storengine>,

    state: HashMap<ScreenAddr, ScreenRun>,
    lock_waiters: Vec<LockWaiter>,
    buffer_outstanding: u64,
    buffer_waiters: VecDeque<ScreenAddr>,
    gc: Option<GcJob>,
    gc_stalled: VecDeque<ScreenAddr>,
    overhead_paid: HashSet<usize>,

    arrivals: Vec<Ps>,
    starts: Vec<Option<Ps>>,
    completions: Vec<Option<Ps>>,
    events: Vec<TraceEvent>,
    dispatches: Vec<DispatchRecord>,
    gc_log: Vec<GcRecord>,
    fatal: Option<SimError>,
    last_time: Ps,
}

/// Runs one workload under one policy and datapath mode.
pub fn run(
    mix: &WorkloadMix,
    policy: PolicyKind,
    params: &HardwareParams,
    mode: Mode,
) -> Result<SimulationReport, SimError> {
    run_with(mix, policy, params, mode, false, 0)
}

/// `run` with trace detail control and a seed recorded into the report.
pub fn run_with(
    mix: &WorkloadMix,
    policy: PolicyKind,
    params: &HardwareParams,
    mode: Mode,
    trace_detail: bool,
    seed: u64,
) -> Result<SimulationReport, SimError> {
    params.validate()?;
    if policy == PolicyKind::Simd && mode == Mode::Flashabacus {
        return Err(SimError::InvalidConfig(
            "the simd reference configuration uses the baseline datapath; run it with --mode baseline".into(),
        ));
    }
    if mix.applications.is_empty() {
        // Nothing to execute: a zero-duration report.
        return Ok(SimulationReport {
            workload: mix.name.clone(),
            classification: mix.classification.as_str().to_string(),
            policy,
            mode,
            seed,
            workers: params.workers(),
            params: params.echo(),
            kernels: Vec::new(),
            busy: Default::default(),
            first_arrival: 0,
            last_completion: 0,
            end_time: 0,
            processed_input_bytes: 0,
            processed_output_bytes: 0,
            events: Vec::new(),
            dispatches: Vec::new(),
            gc_log: Vec::new(),
            workload_digest: workload_digest(&mix.name, &[]),
        });
    }
    mix.validate(&params.geometry.validation_limits())?;

    let instances = expand_instances(mix, params.geometry.page_group_size());
    let shapes: Vec<KernelShape> = instances.iter().map(|i| i.shape.clone()).collect();
    let digest = workload_digest(&mix.name, &instances);

    let (fv, se) = if mode == Mode::Flashabacus {
        let mut fv = Flashvisor::new(params.geometry.clone(), params.scratchpad_freq_hz)?;
        // Input data is bulk-loaded before the run: map every input range.
        let group = params.geometry.page_group_size();
        for inst in &instances {
            for screen in inst.screens.iter().flatten() {
                if screen.input.is_empty() {
                    continue;
                }
                let first = screen.input.start / group;
                for g in 0..screen.input.len / group {
                    fv.translate_write_group(first + g)?;
                }
            }
        }
        let se = Storengine::new(JournalPolicy {
            period: params.journal_period,
            ..JournalPolicy::default()
        });
        (Some(fv), Some(se))
    } else {
        (None, None)
    };

    let n = instances.len();
    let mut engine = Engine {
        params,
        mode,
        policy,
        sched: Scheduler::new(&shapes, SchedulerPolicy::new(policy, params.workers())),
        instances,
        timeline: EventTimeline::new(),
        trace_detail,
        pcie: Resource::default(),
        srio: Resource::default(),
        ddr3l: Resource::default(),
        lanes: (0..params.geometry.array_lanes()).map(|_| Resource::default()).collect(),
        fv_lwp: Resource::default(),
        ssd: Resource::default(),
        host_cpu: Resource::default(),
        fv,
        se,
        state: HashMap::new(),
        lock_waiters: Vec::new(),
        buffer_outstanding: 0,
        buffer_waiters: VecDeque::new(),
        gc: None,
        gc_stalled: VecDeque::new(),
        overhead_paid: HashSet::new(),
        arrivals: vec![0; n],
        starts: vec![None; n],
        completions: vec![None; n],
        events: Vec::new(),
        dispatches: Vec::new(),
        gc_log: Vec::new(),
        fatal: None,
        last_time: 0,
    };

    engine.issue_offloads();
    engine.main_loop()?;
    Ok(engine.into_report(mix, policy, mode, seed, digest))
}

impl<'a> Engine<'a> {
    fn group_size(&self) -> u64 {
        self.params.geometry.page_group_size()
    }

    fn screen(&self, addr: ScreenAddr) -> &InstanceScreen {
        &self.instances[addr.kernel].screens[addr.mblk as usize][addr.screen as usize]
    }

    fn trace(&mut self, time: Ps, actor: Component, kind: EventKind, addr: Option<ScreenAddr>) {
        let ev = match addr {
            Some(a) => {
                let shape = &self.instances[a.kernel].shape;
                TraceEvent {
                    time,
                    actor,
                    kind,
                    app: Some(shape.app_id),
                    kernel: Some(shape.kernel_id),
                    instance: Some(shape.instance),
                    mblk: Some(a.mblk),
                    screen: Some(a.screen),
                }
            }
            None => TraceEvent {
                time,
                actor,
                kind,
                app: None,
                kernel: None,
                instance: None,
                mblk: None,
                screen: None,
            },
        };
        self.events.push(ev);
    }

    // ---- offload protocol -------------------------------------------------

    fn issue_offloads(&mut self) {
        for i in 0..self.instances.len() {
            if self.params.sched.instant_arrival {
                self.timeline.push(0, Ev::Arrival(i));
                continue;
            }
            let desc = self.instances[i].descriptor_bytes;
            let (ts, te) = self.pcie.acquire(0, transfer_ps(desc, self.params.pcie_bw));
            self.timeline.charge(Component::Pcie, ts, te);
            let steps = 5 * self.params.sched.control_step;
            // Flashvisor runs the boot protocol; on the baseline path the
            // host driver does the equivalent work.
            let ce = match self.mode {
                Mode::Flashabacus => {
                    let (cs, ce) = self.fv_lwp.acquire(te, steps);
                    self.timeline.charge(Component::FlashvisorLwp, cs, ce);
                    ce
                }
                Mode::Baseline => {
                    let (cs, ce) = self.host_cpu.acquire(te, steps);
                    self.timeline.charge(Component::HostCpu, cs, ce);
                    ce
                }
            };
            let addr = ScreenAddr { kernel: i, mblk: 0, screen: 0 };
            self.trace(ce, Component::Pcie, EventKind::Control, Some(addr));
            self.timeline.push(ce, Ev::Arrival(i));
        }
    }

    // ---- main loop ---------------------------------------------------------

    /// Drains the queue instant by instant: every event of one timestamp is
    /// applied before the scheduler dispatches, matching Flashvisor draining
    /// its hardware queue before allocating work.
    fn main_loop(&mut self) -> Result<(), SimError> {
        while let Some((now, ev)) = self.timeline.pop() {
            self.last_time = self.last_time.max(now);
            self.maybe_journal(now);
            self.handle(now, ev);
            loop {
                while self.timeline.peek_time() == Some(now) {
                    let (_, ev) = self.timeline.pop().unwrap();
                    self.handle(now, ev);
                }
                self.pump_locks(now);
                if let Some(err) = self.fatal.take() {
                    return Err(err);
                }
                let dispatches = self.sched.poll();
                if dispatches.is_empty() {
                    if self.timeline.peek_time() == Some(now) {
                        continue;
                    }
                    break;
                }
                self.schedule_dispatches(dispatches, now);
            }
        }
        if !self.sched.all_complete()
            || !self.lock_waiters.is_empty()
            || !self.buffer_waiters.is_empty()
            || !self.gc_stalled.is_empty()
        {
            return Err(SimError::Deadlock(self.deadlock_diagnostics()));
        }
        Ok(())
    }

    fn deadlock_diagnostics(&self) -> String {
        let mut parts = Vec::new();
        for w in &self.lock_waiters {
            parts.push(format!(
                "blocked {:?} lock for {:?} on pages [{}, {}]",
                w.kind, w.owner, w.span.first, w.span.last
            ));
        }
        if !self.buffer_waiters.is_empty() {
            parts.push(format!("{} screen(s) stalled on the write-back buffer", self.buffer_waiters.len()));
        }
        if !self.gc_stalled.is_empty() {
            parts.push(format!("{} allocation(s) stalled on reclaim", self.gc_stalled.len()));
        }
        let unfinished: Vec<String> = self
            .completions
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .take(8)
            .map(|(k, _)| {
                let s = &self.instances[k].shape;
                format!("app{}.k{}#{}", s.app_id, s.kernel_id, s.instance)
            })
            .collect();
        if !unfinished.is_empty() {
            parts.push(format!("unfinished kernels: {}", unfinished.join(", ")));
        }
        parts.join("; ")
    }

    fn handle(&mut self, now: Ps, ev: Ev) {
        match ev {
            Ev::Arrival(k) => {
                self.arrivals[k] = now;
                self.sched.on_arrival(k);
            }
            Ev::InputService(sid) => self.input_service(sid, now),
            Ev::ComputeDone(sid) => self.compute_done(sid, now),
            Ev::OutputService(sid) => self.output_service(sid, now),
            Ev::OutputDone(sid) => self.finish_screen(sid, now),
            Ev::FlushDone(sid) => self.flush_done(sid, now),
            Ev::GcStep => self.gc_step_release(now),
            Ev::GcErased => self.gc_erased(now),
        }
    }

    // ---- dispatch & compute -------------------------------------------------

    fn schedule_dispatches(&mut self, dispatches: Vec<Dispatch>, now: Ps) {
        for d in dispatches {
            let shape = &self.instances[d.screen.kernel].shape;
            self.dispatches
                .push(DispatchRecord::new(now, d.lwp, shape, d.screen, RecordKind::Dispatch));
            self.trace(now, Component::Lwp(d.lwp), EventKind::Dispatch, Some(d.screen));
            self.starts[d.screen.kernel].get_or_insert(now);

            // Per-dispatch IPC/scheduling overhead: intra policies pay it per
            // screen, inter policies once per kernel binding.
            let overhead = self.params.sched.dispatch_overhead;
            let pay = overhead > 0
                && (!matches!(self.policy, PolicyKind::InterSt | PolicyKind::InterDy)
                    || self.overhead_paid.insert(d.screen.kernel));
            let t0 = if pay {
                self.timeline.charge(Component::FlashvisorLwp, now, now + overhead);
                now + overhead
            } else {
                now
            };

            let screen = self.screen(d.screen);
            let compute_dur = compute_ps(screen.instructions, self.params.ipc, self.params.lwp_freq_hz);
            let input = screen.input;
            self.state.insert(
                d.screen,
                ScreenRun {
                    lwp: d.lwp,
                    compute_dur,
                    ..ScreenRun::default()
                },
            );

            if input.is_empty() {
                self.begin_compute(d.screen, t0, t0);
            } else {
                match self.mode {
                    Mode::Flashabacus => {
                        let groups = input.len / self.group_size();
                        let lookups = groups * self.fv.as_ref().unwrap().lookup_ps;
                        let (s, e) = self.fv_lwp.acquire(t0, self.params.flashvisor_msg + lookups);
                        self.timeline.charge(Component::FlashvisorLwp, s, e);
                        self.timeline.push(e, Ev::InputService(d.screen));
                    }
                    Mode::Baseline => {
                        let input_done = self.host_input(input.len, t0);
                        self.trace(input_done, Component::Pcie, EventKind::Dma, Some(d.screen));
                        let anchor = if self.params.host.double_buffer { t0 } else { input_done };
                        self.begin_compute(d.screen, anchor, input_done);
                    }
                }
            }
        }
    }

    fn begin_compute(&mut self, sid: ScreenAddr, anchor: Ps, input_done: Ps) {
        let screen = self.screen(sid);
        let mem_bytes =
            ((screen.input.len + screen.output.len) as f64 * self.params.ddr3l_traffic_factor) as u64;
        let mem_done = if mem_bytes > 0 {
            let (ms, me) = self.ddr3l.acquire(anchor, transfer_ps(mem_bytes, self.params.ddr3l_bw));
            self.timeline.charge(Component::Ddr3l, ms, me);
            me
        } else {
            anchor
        };
        let dur = self.state[&sid].compute_dur;
        let t_done = (anchor + dur).max(input_done).max(mem_done);
        self.timeline.push(t_done, Ev::ComputeDone(sid));
    }

    fn compute_done(&mut self, sid: ScreenAddr, now: Ps) {
        let run = &self.state[&sid];
        let (lwp, dur) = (run.lwp, run.compute_dur);
        self.timeline.charge(Component::Lwp(lwp), now - dur, now);
        self.trace(now, Component::Lwp(lwp), EventKind::ComputeDone, Some(sid));

        let output = self.screen(sid).output;
        if output.is_empty() {
            self.finish_screen(sid, now);
            return;
        }
        match self.mode {
            Mode::Flashabacus => {
                let groups = output.len / self.group_size();
                let lookups = groups * self.fv.as_ref().unwrap().lookup_ps;
                let (s, e) = self.fv_lwp.acquire(now, self.params.flashvisor_msg + lookups);
                self.timeline.charge(Component::FlashvisorLwp, s, e);
                self.timeline.push(e, Ev::OutputService(sid));
            }
            Mode::Baseline => {
                let done = self.host_output(output.len, now);
                self.trace(done, Component::Pcie, EventKind::Dma, Some(sid));
                self.timeline.push(done, Ev::OutputDone(sid));
            }
        }
    }

    fn finish_screen(&mut self, sid: ScreenAddr, now: Ps) {
        if let Some(lock) = self.state.get_mut(&sid).and_then(|r| r.input_lock.take()) {
            self.fv.as_mut().unwrap().release(lock);
        }
        let lwp = self.state[&sid].lwp;
        let shape = &self.instances[sid.kernel].shape;
        self.dispatches
            .push(DispatchRecord::new(now, lwp, shape, sid, RecordKind::Complete));
        match self.sched.on_completion(lwp, sid) {
            Ok(()) => {
                if self.sched.chain().kernel_complete(sid.kernel) {
                    self.completions[sid.kernel] = Some(now);
                }
            }
            Err(e) => self.fatal = Some(SimError::Protocol(e)),
        }
    }

    // ---- flash input path ---------------------------------------------------

    fn input_service(&mut self, sid: ScreenAddr, now: Ps) {
        let input = self.screen(sid).input;
        let fv = self.fv.as_mut().unwrap();
        let span = fv.page_span(input);
        let owner = LockOwner::Kernel(sid.kernel as u64);
        match fv.locks.try_acquire(span, LockKind::ReadMap, owner) {
            Some(lock) => self.proceed_input(sid, now, lock),
            None => self.lock_waiters.push(LockWaiter {
                span,
                kind: LockKind::ReadMap,
                owner,
                cont: Cont::Input(sid),
            }),
        }
    }

    fn proceed_input(&mut self, sid: ScreenAddr, now: Ps, lock: LockId) {
        self.state.get_mut(&sid).unwrap().input_lock = Some(lock);
        let input = self.screen(sid).input;
        let group = self.group_size();
        let geometry = self.params.geometry.clone();
        let read_t = geometry.read_latency;
        let xfer_t = transfer_ps(group, self.params.flash_link_bw());
        let ddr_t = transfer_ps(group, self.params.ddr3l_bw);
        let first_group = input.start / group;
        let mut input_done = now;
        for i in 0..input.len / group {
            let logical = first_group + i;
            let phys = self
                .fv
                .as_ref()
                .unwrap()
                .table
                .lookup(logical)
                .expect("input range was bulk-loaded") as u64;
            let lane = geometry.lane_of(phys) as usize;
            let (as_, ae) = self.lanes[lane].acquire(now, read_t);
            for c in 0..geometry.channels {
                self.timeline.charge(Component::Channel(c), as_, ae);
            }
            let (ts, te) = self.srio.acquire(ae, xfer_t);
            self.timeline.charge(Component::Srio, ts, te);
            let (ds, de) = self.ddr3l.acquire(te, ddr_t);
            self.timeline.charge(Component::Ddr3l, ds, de);
            input_done = input_done.max(de);
            if self.trace_detail {
                self.trace(ae, Component::Channel((phys % geometry.channels as u64) as u32), EventKind::FlashRead, Some(sid));
            }
        }
        self.trace(input_done, Component::Ddr3l, EventKind::Dma, Some(sid));
        self.begin_compute(sid, now, input_done);
    }

    // ---- flash output path ----------------------------------------------------

    fn output_service(&mut self, sid: ScreenAddr, now: Ps) {
        let output = self.screen(sid).output;
        let fv = self.fv.as_mut().unwrap();
        let span = fv.page_span(output);
        let owner = LockOwner::Kernel(sid.kernel as u64);
        match fv.locks.try_acquire(span, LockKind::WriteMap, owner) {
            Some(lock) => {
                self.state.get_mut(&sid).unwrap().output_lock = Some(lock);
                self.proceed_output(sid, now);
            }
            None => self.lock_waiters.push(LockWaiter {
                span,
                kind: LockKind::WriteMap,
                owner,
                cont: Cont::Output(sid),
            }),
        }
    }

    /// One block's worth of groups stays reserved as migration headroom, so
    /// a round-robin victim can always be emptied.
    fn gc_reserve(&self) -> u64 {
        self.params.geometry.groups_per_block as u64
    }

    /// Allocates physical groups for the screen's output. Exhausting the
    /// reserve emits a reclaim request and stalls the write until space
    /// exists; it is not a failure.
    fn proceed_output(&mut self, sid: ScreenAddr, now: Ps) {
        let output = self.screen(sid).output;
        let group = self.group_size();
        let first_group = output.start / group;
        let total = output.len / group;
        loop {
            let next = self.state[&sid].out_alloc.len() as u64;
            if next == total {
                break;
            }
            if self.fv.as_ref().unwrap().pool.free_groups() <= self.gc_reserve() {
                self.gc_stalled.push_back(sid);
                self.start_gc(now);
                return;
            }
            match self.fv.as_mut().unwrap().translate_write_group(first_group + next) {
                Ok(phys) => {
                    self.charge_block_open(phys, now);
                    self.state.get_mut(&sid).unwrap().out_alloc.push(phys);
                }
                Err(FlashError::NeedsReclaim) => {
                    self.gc_stalled.push_back(sid);
                    self.start_gc(now);
                    return;
                }
                Err(e) => {
                    self.fatal = Some(SimError::Flash(e));
                    return;
                }
            }
        }
        if self.buffer_outstanding + total > self.buffer_capacity_groups() {
            self.buffer_waiters.push_back(sid);
            return;
        }
        self.admit_flush(sid, now);
    }

    fn buffer_capacity_groups(&self) -> u64 {
        (self.params.write_buffer_bytes / self.group_size()).max(1)
    }

    /// Metadata persistence: the first two pages of a freshly opened block
    /// hold its page-table entries.
    fn charge_block_open(&mut self, phys: u32, now: Ps) {
        let gpb = self.params.geometry.groups_per_block as u64;
        if !(phys as u64).is_multiple_of(gpb) {
            return;
        }
        let lane = self.params.geometry.lane_of(phys as u64) as usize;
        let meta_pages = self.se.as_ref().map_or(2, |s| s.journal.metadata_pages_per_block) as u64;
        let (ms, me) = self.lanes[lane].acquire(now, meta_pages * self.params.geometry.write_latency);
        for c in 0..self.params.geometry.channels {
            self.timeline.charge(Component::Channel(c), ms, me);
        }
    }

    /// Write-back admission: the screen completes once its output groups sit
    /// in the DDR3L buffer; the flash programs drain in the background.
    fn admit_flush(&mut self, sid: ScreenAddr, now: Ps) {
        let output = self.screen(sid).output;
        let group = self.group_size();
        let total = output.len / group;
        self.buffer_outstanding += total;

        let geometry = self.params.geometry.clone();
        let xfer_t = transfer_ps(group, self.params.flash_link_bw());
        let ddr_t = transfer_ps(group, self.params.ddr3l_bw);
        let write_t = geometry.write_latency;
        let phys_groups = self.state[&sid].out_alloc.clone();
        let mut flush_done = now;
        for phys in phys_groups {
            let (rs, re) = self.ddr3l.acquire(now, ddr_t);
            self.timeline.charge(Component::Ddr3l, rs, re);
            let (ts, te) = self.srio.acquire(re, xfer_t);
            self.timeline.charge(Component::Srio, ts, te);
            let lane = geometry.lane_of(phys as u64) as usize;
            let (ws, we) = self.lanes[lane].acquire(te, write_t);
            for c in 0..geometry.channels {
                self.timeline.charge(Component::Channel(c), ws, we);
            }
            flush_done = flush_done.max(we);
            if self.trace_detail {
                self.trace(we, Component::Channel(phys % geometry.channels), EventKind::FlashWrite, Some(sid));
            }
        }
        self.timeline.push(flush_done, Ev::FlushDone(sid));
        self.finish_screen(sid, now);
    }

    fn flush_done(&mut self, sid: ScreenAddr, now: Ps) {
        let output = self.screen(sid).output;
        let groups = output.len / self.group_size();
        self.buffer_outstanding -= groups;
        self.trace(now, Component::Srio, EventKind::FlashWrite, Some(sid));
        if let Some(lock) = self.state.get_mut(&sid).and_then(|r| r.output_lock.take()) {
            self.fv.as_mut().unwrap().release(lock);
        }
        while let Some(&head) = self.buffer_waiters.front() {
            let head_groups = self.screen(head).output.len / self.group_size();
            if self.buffer_outstanding + head_groups > self.buffer_capacity_groups() {
                break;
            }
            self.buffer_waiters.pop_front();
            self.admit_flush(head, now);
        }
        // Idle-time background reclaim at the low-water mark.
        if self.gc.is_none() {
            let fv = self.fv.as_ref().unwrap();
            if fv.pool.free_groups() < 2 * self.params.geometry.groups_per_block as u64
                && fv.pool.used_blocks().next().is_some()
            {
                self.start_gc(now);
            }
        }
    }

    // ---- baseline host datapath ------------------------------------------------

    /// SSD -> host DRAM -> (user/kernel copy) -> PCIe -> accelerator DRAM.
    fn host_input(&mut self, bytes: u64, t0: Ps) -> Ps {
        let h = &self.params.host;
        let (s1, e1) = self.host_cpu.acquire(t0, h.sw_latency);
        self.timeline.charge(Component::HostCpu, s1, e1);
        let (s2, e2) = self.ssd.acquire(e1, transfer_ps(bytes, h.ssd_read_bw));
        self.timeline.charge(Component::Ssd, s2, e2);
        self.timeline.charge(Component::HostCpu, s2, e2);
        self.timeline.charge(Component::HostDram, s2, e2);
        let (s3, e3) = self.host_cpu.acquire(e2, transfer_ps(bytes, h.stack_bw));
        self.timeline.charge(Component::HostCpu, s3, e3);
        self.timeline.charge(Component::HostDram, s3, e3);
        let (s4, e4) = self.pcie.acquire(e3, transfer_ps(bytes, self.params.pcie_bw));
        self.timeline.charge(Component::Pcie, s4, e4);
        self.timeline.charge(Component::HostCpu, s4, e4);
        self.timeline.charge(Component::HostDram, s4, e4);
        let (s5, e5) = self.ddr3l.acquire(e4, transfer_ps(bytes, self.params.ddr3l_bw));
        self.timeline.charge(Component::Ddr3l, s5, e5);
        e5
    }

    /// The inverse path for results: accelerator DRAM -> PCIe -> host copy ->
    /// SSD write.
    fn host_output(&mut self, bytes: u64, t0: Ps) -> Ps {
        let h = &self.params.host;
        let (s1, e1) = self.ddr3l.acquire(t0, transfer_ps(bytes, self.params.ddr3l_bw));
        self.timeline.charge(Component::Ddr3l, s1, e1);
        let (s2, e2) = self.pcie.acquire(e1, transfer_ps(bytes, self.params.pcie_bw));
        self.timeline.charge(Component::Pcie, s2, e2);
        self.timeline.charge(Component::HostCpu, s2, e2);
        self.timeline.charge(Component::HostDram, s2, e2);
        let (s3, e3) = self
            .host_cpu
            .acquire(e2, h.sw_latency + transfer_ps(bytes, h.stack_bw));
        self.timeline.charge(Component::HostCpu, s3, e3);
        self.timeline.charge(Component::HostDram, s3, e3);
        let (s4, e4) = self.ssd.acquire(e3, transfer_ps(bytes, h.ssd_write_bw));
        self.timeline.charge(Component::Ssd, s4, e4);
        self.timeline.charge(Component::HostCpu, s4, e4);
        e4
    }

    // ---- journaling ---------------------------------------------------------------

    fn maybe_journal(&mut self, now: Ps) {
        let (Some(se), Some(fv)) = (self.se.as_mut(), self.fv.as_ref()) else {
            return;
        };
        let Some(groups) = se.journal_tick(now, fv) else {
            return;
        };
        let geometry = self.params.geometry.clone();
        let xfer_t = transfer_ps(self.group_size(), self.params.flash_link_bw());
        let mut end = now;
        for i in 0..groups {
            let (ts, te) = self.srio.acquire(now, xfer_t);
            self.timeline.charge(Component::Srio, ts, te);
            let lane = (i % geometry.array_lanes() as u64) as usize;
            let (ws, we) = self.lanes[lane].acquire(te, geometry.write_latency);
            for c in 0..geometry.channels {
                self.timeline.charge(Component::Channel(c), ws, we);
            }
            end = end.max(we);
        }
        self.timeline.charge(Component::StorengineLwp, now, end);
        self.trace(now, Component::StorengineLwp, EventKind::Journal, None);
    }

    // ---- garbage collection ----------------------------------------------------------

    fn start_gc(&mut self, now: Ps) {
        if self.gc.is_some() {
            return;
        }
        // Round-robin victim scan, deferring blocks too valid to migrate with
        // the current headroom.
        let fv = self.fv.as_mut().unwrap();
        let free = fv.pool.free_groups();
        let candidates = fv.pool.used_blocks().count();
        let mut victim = None;
        for _ in 0..candidates {
            match fv.pool.select_victim() {
                Ok(v) => {
                    if fv.pool.block(v).valid_groups as u64 <= free {
                        victim = Some(v);
                        break;
                    }
                }
                Err(GcError::NothingToReclaim) => break,
                Err(other) => {
                    self.fatal = Some(SimError::Deadlock(other.to_string()));
                    return;
                }
            }
        }
        match victim {
            Some(victim) => {
                self.trace(now, Component::StorengineLwp, EventKind::Gc, None);
                self.gc = Some(GcJob {
                    victim,
                    next_offset: 0,
                    migrated: 0,
                    started: now,
                    pending: None,
                    release_on_step: None,
                });
                self.gc_advance(now);
            }
            None => {
                if !self.gc_stalled.is_empty() {
                    self.fatal = Some(SimError::Deadlock(
                        "reclaim required but no used block can be migrated with the remaining \
                         headroom (over-provisioning misconfigured)"
                            .into(),
                    ));
                }
            }
        }
    }

    /// Advances the reclaim job: one valid-group migration at a time, each
    /// under a storage-manager range lock for its copy duration.
    fn gc_advance(&mut self, now: Ps) {
        let gpb = self.params.geometry.groups_per_block as u64;
        loop {
            let Some(job) = self.gc.as_mut() else { return };
            let base = job.victim as u64 * gpb;
            if job.next_offset >= gpb {
                // Every surviving group moved: erase the victim.
                let lane = self.params.geometry.lane_of(base) as usize;
                let (es, ee) = self.lanes[lane].acquire(now, self.params.geometry.erase_latency);
                for c in 0..self.params.geometry.channels {
                    self.timeline.charge(Component::Channel(c), es, ee);
                }
                self.timeline.charge(Component::StorengineLwp, now, ee);
                self.timeline.push(ee, Ev::GcErased);
                return;
            }
            let phys = (base + job.next_offset) as u32;
            job.next_offset += 1;
            let fv = self.fv.as_ref().unwrap();
            let Some(logical) = fv.table.logical_of(phys) else {
                continue;
            };
            let span = self.group_lock_span(logical);
            if fv.locks.would_block_migration(span) {
                let job = self.gc.as_mut().unwrap();
                job.pending = Some((logical, phys));
                self.lock_waiters.push(LockWaiter {
                    span,
                    kind: LockKind::WriteMap,
                    owner: LockOwner::Storengine,
                    cont: Cont::Gc,
                });
                return;
            }
            let lock = self
                .fv
                .as_mut()
                .unwrap()
                .locks
                .try_acquire_migration(span)
                .expect("checked compatible");
            if self.gc_migrate_one(now, logical, phys, lock) {
                return;
            }
        }
    }

    fn group_lock_span(&self, logical: u64) -> PageSpan {
        let group = self.group_size();
        let pages = group / self.params.geometry.page_size;
        PageSpan::new(logical * pages, (logical + 1) * pages - 1)
    }

    /// Copies one valid group to the current write position. Returns true if
    /// a copy was scheduled (the job waits for its completion event).
    fn gc_migrate_one(&mut self, now: Ps, logical: u64, from: u32, lock: LockId) -> bool {
        let fv = self.fv.as_mut().unwrap();
        let to = match fv.pool.allocate_group() {
            Ok(t) => t,
            Err(_) => {
                self.fatal = Some(SimError::Deadlock(format!(
                    "gc deadlock: no destination while migrating block {} (over-provisioning misconfigured)",
                    self.gc.as_ref().unwrap().victim
                )));
                return true;
            }
        };
        fv.table.migrate(logical, from, to);
        fv.pool.invalidate_group(from);
        self.charge_block_open(to, now);
        let geometry = self.params.geometry.clone();
        let (rs, re) = self.lanes[geometry.lane_of(from as u64) as usize].acquire(now, geometry.read_latency);
        let (ws, we) = self.lanes[geometry.lane_of(to as u64) as usize].acquire(re, geometry.write_latency);
        for c in 0..geometry.channels {
            self.timeline.charge(Component::Channel(c), rs, re);
            self.timeline.charge(Component::Channel(c), ws, we);
        }
        self.timeline.charge(Component::StorengineLwp, now, we);
        if self.trace_detail {
            self.trace(we, Component::StorengineLwp, EventKind::Gc, None);
        }
        let job = self.gc.as_mut().unwrap();
        job.migrated += 1;
        job.release_on_step = Some(lock);
        self.timeline.push(we, Ev::GcStep);
        true
    }

    /// A migration copy finished: release its range lock and continue.
    fn gc_step_release(&mut self, now: Ps) {
        if let Some(lock) = self.gc.as_mut().and_then(|j| j.release_on_step.take()) {
            self.fv.as_mut().unwrap().release(lock);
        }
        self.gc_advance(now);
    }

    fn gc_erased(&mut self, now: Ps) {
        let job = self.gc.take().expect("erase without a job");
        let fv = self.fv.as_mut().unwrap();
        fv.pool.erase_block(job.victim);
        let _ = job.started;
        self.gc_log.push(GcRecord {
            time: now,
            victim: job.victim,
            migrated_groups: job.migrated,
            erase_count: fv.pool.block(job.victim).erase_count,
        });
        self.trace(now, Component::StorengineLwp, EventKind::Gc, None);
        // Retry writes stalled on allocation once headroom is back.
        while self.fv.as_ref().unwrap().pool.free_groups() > self.gc_reserve() {
            let Some(sid) = self.gc_stalled.pop_front() else { break };
            self.proceed_output(sid, now);
            if self.gc.is_some() || self.fatal.is_some() {
                return;
            }
        }
        if !self.gc_stalled.is_empty() {
            self.start_gc(now);
            return;
        }
        let fv = self.fv.as_ref().unwrap();
        if fv.pool.free_groups() < 2 * self.params.geometry.groups_per_block as u64
            && fv.pool.used_blocks().next().is_some()
        {
            self.start_gc(now);
        }
    }

    // ---- range-lock fairness ------------------------------------------------------

    /// Grants waiting lock requests in FIFO order per overlapping range: a
    /// waiter may only jump the queue if it conflicts with no earlier waiter.
    fn pump_locks(&mut self, now: Ps) {
        loop {
            let Some(fv) = self.fv.as_ref() else { return };
            let mut grant_idx = None;
            'scan: for (i, w) in self.lock_waiters.iter().enumerate() {
                let is_migration = matches!(w.cont, Cont::Gc);
                for earlier in &self.lock_waiters[..i] {
                    let overlap = earlier.span.first <= w.span.last && w.span.first <= earlier.span.last;
                    let contended = if is_migration {
                        crate::flashvisor::blocks_migration(earlier.kind, earlier.owner)
                    } else {
                        crate::flashvisor::conflicts(w.kind, w.owner, earlier.kind, earlier.owner)
                    };
                    if overlap && contended {
                        continue 'scan;
                    }
                }
                let blocked = if is_migration {
                    fv.locks.would_block_migration(w.span)
                } else {
                    fv.locks.would_block(w.span, w.kind, w.owner)
                };
                if !blocked {
                    grant_idx = Some(i);
                    break;
                }
            }
            let Some(i) = grant_idx else { return };
            let w = self.lock_waiters.remove(i);
            let locks = &mut self.fv.as_mut().unwrap().locks;
            let lock = if matches!(w.cont, Cont::Gc) {
                locks.try_acquire_migration(w.span)
            } else {
                locks.try_acquire(w.span, w.kind, w.owner)
            }
            .expect("checked compatible");
            match w.cont {
                Cont::Input(sid) => self.proceed_input(sid, now, lock),
                Cont::Output(sid) => {
                    self.state.get_mut(&sid).unwrap().output_lock = Some(lock);
                    self.proceed_output(sid, now);
                }
                Cont::Gc => {
                    let Some((logical, phys)) = self.gc.as_mut().and_then(|j| j.pending.take()) else {
                        self.fv.as_mut().unwrap().release(lock);
                        continue;
                    };
                    // The group may have been superseded while we waited.
                    let still = self.fv.as_ref().unwrap().table.logical_of(phys) == Some(logical);
                    if still {
                        if !self.gc_migrate_one(now, logical, phys, lock) {
                            self.gc_advance(now);
                        }
                    } else {
                        self.fv.as_mut().unwrap().release(lock);
                        self.gc_advance(now);
                    }
                }
            }
            if self.fatal.is_some() {
                return;
            }
        }
    }

    // ---- report ---------------------------------------------------------------------

    fn into_report(
        self,
        mix: &WorkloadMix,
        policy: PolicyKind,
        mode: Mode,
        seed: u64,
        digest: u64,
    ) -> SimulationReport {
        let kernels: Vec<KernelRecord> = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| KernelRecord {
                app_id: inst.shape.app_id,
                kernel_id: inst.shape.kernel_id,
                instance: inst.shape.instance,
                arrival: self.arrivals[i],
                start: self.starts[i].expect("run finished"),
                completion: self.completions[i].expect("run finished"),
                input_bytes: inst.screens.iter().flatten().map(|s| s.input.len).sum(),
                output_bytes: inst.screens.iter().flatten().map(|s| s.output.len).sum(),
            })
            .collect();
        let first_arrival = kernels.iter().map(|k| k.arrival).min().unwrap_or(0);
        let last_completion = kernels.iter().map(|k| k.completion).max().unwrap_or(0);
        let busy: std::collections::BTreeMap<Component, Vec<(Ps, Ps)>> = self
            .timeline
            .busy
            .iter()
            .map(|(c, l)| (*c, l.merged()))
            .collect();
        let ledger_end = busy
            .values()
            .flat_map(|iv| iv.iter().map(|(_, e)| *e))
            .max()
            .unwrap_or(0);
        SimulationReport {
            workload: mix.name.clone(),
            classification: mix.classification.as_str().to_string(),
            policy,
            mode,
            seed,
            workers: self.params.workers(),
            params: self.params.echo(),
            kernels,
            busy,
            first_arrival,
            last_completion,
            end_time: self.last_time.max(ledger_end).max(last_completion),
            processed_input_bytes: self.instances.iter().map(|i| i.screens.iter().flatten().map(|s| s.input.len).sum::<u64>()).sum(),
            processed_output_bytes: self.instances.iter().map(|i| i.screens.iter().flatten().map(|s| s.output.len).sum::<u64>()).sum(),
            events: self.events,
            dispatches: self.dispatches,
            gc_log: self.gc_log,
            workload_digest: digest,
        }
    }
}
