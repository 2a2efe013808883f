//! Cycle-stepped model of one physical core running two hardware threads
//! over partitioned out-of-order structures, and the multi-core machine
//! that advances cores in lockstep around a shared LLC.

use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;

use crate::cache::{line_of, PrivateCaches, Uncore};
use crate::config::{CoreConfig, Cycle, FuConfig, ThreadId};
use crate::error::SimError;
use crate::op::{MicroOp, OpClass, OpHook};
use crate::partition::{
    Allocation, PartitionScheme, PartitionedStructure, RepartitionMode, RepartitionReceipt,
    SchemeLabel, StructureKind,
};

/// Cycles a thread may sit on a zero-limit structure before the run is
/// flagged as non-terminating.
pub const ZERO_LIMIT_STALL_CYCLES: u64 = 1_000_000;
const BTB_MISS_BUBBLE: Cycle = 2;
const NOT_DONE: Cycle = Cycle::MAX;

/// Queue-like structures whose entries are held by in-flight ops.
const QUEUE_KINDS: [StructureKind; 7] = [
    StructureKind::Iq,
    StructureKind::Lq,
    StructureKind::Sq,
    StructureKind::Rob,
    StructureKind::IntReg,
    StructureKind::FpReg,
    StructureKind::VecReg,
];

#[inline]
fn queue_slot(kind: StructureKind) -> Option<usize> {
    QUEUE_KINDS.iter().position(|&k| k == kind)
}

/// Source of ops for the hardware threads of every core in a machine.
pub trait Workload {
    /// Next op for `thread` on `core`, or `None` if the thread has nothing to
    /// run this cycle. Sequence numbers must be contiguous per thread.
    fn next_op(&mut self, core: usize, thread: ThreadId, now: Cycle) -> Option<MicroOp>;

    /// Invoked when an op carrying a hook retires.
    fn on_commit(&mut self, core: usize, thread: ThreadId, op: &MicroOp, now: Cycle);

    /// Device activity at the start of a cycle. Lines written into the LLC
    /// by DMA are appended to `dma`.
    fn tick(&mut self, _now: Cycle, _dma: &mut Vec<u64>) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StallReason {
    None,
    Iq,
    Lq,
    Sq,
    Rob,
    Reg,
    Mem,
    Ring,
}

impl StallReason {
    fn from_kind(kind: StructureKind) -> StallReason {
        match kind {
            StructureKind::Iq => StallReason::Iq,
            StructureKind::Lq => StallReason::Lq,
            StructureKind::Sq => StallReason::Sq,
            StructureKind::Rob => StallReason::Rob,
            _ => StallReason::Reg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ThreadContext {
    pub thread_id: ThreadId,
    /// Code address of the most recently fetched op.
    pub fetch_pc: u64,
    pub stalled_on: StallReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CommitRecord {
    pub core: usize,
    pub thread: ThreadId,
    pub seq: u64,
    pub class: OpClass,
    pub cycle: Cycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Fetch,
    Dispatch,
    Issue,
    Commit,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Fetch => "fetch",
            Stage::Dispatch => "dispatch",
            Stage::Issue => "issue",
            Stage::Commit => "commit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: Cycle,
    pub core: usize,
    pub thread: ThreadId,
    pub stage: Stage,
    pub class: OpClass,
    /// Usage of ROB, IQ, LQ, SQ, IntReg, FpReg, VecReg for the thread.
    pub usage: [u32; 7],
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let u = self.usage;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.thread.name(),
            self.stage.name(),
            self.class.name(),
            u[3],
            u[0],
            u[1],
            u[2],
            u[4],
            u[5],
            u[6]
        )
    }
}

pub const TRACE_HEADER: &str = "cycle,thread,stage,opclass,rob,iq,lq,sq,int_reg,fp_reg,vec_reg";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CycleEvents {
    pub cycle: Cycle,
    pub commits: Vec<CommitRecord>,
    pub packet_events: Vec<(usize, ThreadId, OpHook)>,
    pub warnings: Vec<String>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Occupancy {
    pub sum: u64,
    pub max: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoreStats {
    pub cycles: u64,
    pub committed: [u64; 2],
    pub fetched: [u64; 2],
    pub dispatched: [u64; 2],
    pub issued_by_class: [[u64; 6]; 2],
    pub mispredicts: [u64; 2],
    pub btb_misses: [u64; 2],
    pub flushed_ops: u64,
    /// `occupancy[queue kind][thread]` for ROB, IQ, LQ, SQ and registers.
    pub occupancy: [[Occupancy; 2]; 7],
}

impl Default for CoreStats {
    fn default() -> Self {
        CoreStats {
            cycles: 0,
            committed: [0; 2],
            fetched: [0; 2],
            dispatched: [0; 2],
            issued_by_class: [[0; 6]; 2],
            mispredicts: [0; 2],
            btb_misses: [0; 2],
            flushed_ops: 0,
            occupancy: Default::default(),
        }
    }
}

impl CoreStats {
    pub fn occupancy(&self, kind: StructureKind, thread: ThreadId) -> Option<Occupancy> {
        queue_slot(kind).map(|i| self.occupancy[i][thread.index()])
    }

    pub fn ipc(&self, thread: ThreadId) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.committed[thread.index()] as f64 / self.cycles as f64
        }
    }
}

#[derive(Clone, Debug)]
struct RobEntry {
    op: MicroOp,
    issued: bool,
    done: Cycle,
}

#[derive(Clone, Debug)]
struct IqEntry {
    seq: u64,
    dispatched: Cycle,
    ready_at: Option<Cycle>,
}

#[derive(Clone, Debug)]
struct ThreadState {
    ctx: ThreadContext,
    rob: VecDeque<RobEntry>,
    iq: Vec<IqEntry>,
    fetch_buf: VecDeque<(MicroOp, Cycle)>,
    replay: VecDeque<MicroOp>,
    staged: Option<MicroOp>,
    next_seq: u64,
    fetch_resume: Cycle,
    branch_block: Option<u64>,
    last_fetch_line: Option<u64>,
    zero_limit_stall: u64,
    stall_reported: bool,
}

impl ThreadState {
    fn new(id: ThreadId) -> Self {
        ThreadState {
            ctx: ThreadContext {
                thread_id: id,
                fetch_pc: 0,
                stalled_on: StallReason::None,
            },
            rob: VecDeque::new(),
            iq: Vec::new(),
            fetch_buf: VecDeque::new(),
            replay: VecDeque::new(),
            staged: None,
            next_seq: 0,
            fetch_resume: 0,
            branch_block: None,
            last_fetch_line: None,
            zero_limit_stall: 0,
            stall_reported: false,
        }
    }

    /// Completion cycle of op `seq`, `NOT_DONE` if it has not issued.
    #[inline]
    fn done_of(&self, seq: u64) -> Cycle {
        match self.rob.front() {
            Some(head) if seq >= head.op.seq => {
                let e = &self.rob[(seq - head.op.seq) as usize];
                debug_assert_eq!(e.op.seq, seq);
                e.done
            }
            _ => 0,
        }
    }

    fn in_flight(&self) -> usize {
        self.rob.len()
    }
}

/// One physical core: two hardware threads, partitioned queues, private
/// caches and shared functional units.
#[derive(Clone, Debug)]
pub struct Core {
    pub id: usize,
    config: CoreConfig,
    fu: FuConfig,
    scheme: PartitionScheme,
    queues: [PartitionedStructure; 7],
    pub caches: PrivateCaches,
    threads: [ThreadState; 2],
    pub stats: CoreStats,
    /// Fetch and dispatch gated while a drain is in progress.
    gated: bool,
    pub trace_enabled: bool,
}

impl Core {
    pub fn new(id: usize, config: CoreConfig, scheme: PartitionScheme) -> Result<Self, SimError> {
        config.validate()?;
        scheme.validate(&config).map_err(SimError::InvalidScheme)?;
        let queues = QUEUE_KINDS
            .map(|k| PartitionedStructure::new(k, k.capacity(&config), scheme.limits[k.index()]));
        let caches = PrivateCaches::new(&config, &scheme);
        Ok(Core {
            id,
            fu: config.fu,
            config,
            scheme,
            queues,
            caches,
            threads: [
                ThreadState::new(ThreadId::Sdt),
                ThreadState::new(ThreadId::Main),
            ],
            stats: CoreStats::default(),
            gated: false,
            trace_enabled: false,
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.config
    }

    pub fn scheme(&self) -> &PartitionScheme {
        &self.scheme
    }

    pub fn label(&self) -> SchemeLabel {
        self.scheme.label
    }

    pub fn context(&self, thread: ThreadId) -> &ThreadContext {
        &self.threads[thread.index()].ctx
    }

    pub fn structure(&self, kind: StructureKind) -> Option<&PartitionedStructure> {
        queue_slot(kind).map(|i| &self.queues[i])
    }

    pub fn limit(&self, kind: StructureKind, thread: ThreadId) -> u32 {
        self.scheme.limit(kind, thread)
    }

    /// Live entries of `kind` owned by `thread`. Way-partitioned caches
    /// report their way allocation.
    pub fn usage(&self, kind: StructureKind, thread: ThreadId) -> u32 {
        match kind {
            StructureKind::Btb => self.caches.btb.usage(thread),
            StructureKind::Itlb => self.caches.itlb.usage(thread),
            StructureKind::Dtlb => self.caches.dtlb.usage(thread),
            StructureKind::L1dWays | StructureKind::L2Ways | StructureKind::L1iWays => {
                self.scheme.limit(kind, thread)
            }
            k => self.queues[queue_slot(k).unwrap()].usage[thread.index()],
        }
    }

    pub fn in_flight(&self, thread: ThreadId) -> usize {
        self.threads[thread.index()].in_flight()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.iter().all(|t| t.rob.is_empty())
    }

    /// Checks usage ≤ limit and Σ limit ≤ capacity for every structure and
    /// audits queue usage registers against the live entries they count.
    pub fn check_partition_safety(&self) -> Result<(), String> {
        for kind in StructureKind::ALL {
            let cap = kind.capacity(&self.config);
            let [a, b] = self.scheme.limits[kind.index()];
            if a + b > cap {
                return Err(format!("{kind}: limits {a}+{b} exceed capacity {cap}"));
            }
            for t in ThreadId::ALL {
                let u = self.usage(kind, t);
                if u > self.scheme.limit(kind, t) {
                    return Err(format!("{kind}: {} usage {u} exceeds limit", t.name()));
                }
            }
        }
        for t in ThreadId::ALL {
            let ts = &self.threads[t.index()];
            let mut expect = [0u32; 7];
            for e in &ts.rob {
                expect[3] += 1;
                match e.op.class {
                    OpClass::Load => expect[1] += 1,
                    OpClass::Store => expect[2] += 1,
                    _ => {}
                }
                if let Some(k) = e.op.class.dest_regs() {
                    expect[queue_slot(k).unwrap()] += 1;
                }
            }
            expect[0] = ts.iq.len() as u32;
            for (i, q) in self.queues.iter().enumerate() {
                if q.usage[t.index()] != expect[i] {
                    return Err(format!(
                        "{} usage register {} != {} live entries for {}",
                        q.kind,
                        q.usage[t.index()],
                        expect[i],
                        t.name()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Per-thread stage bandwidth: width split by ROB limit, remainder
    /// handed out round-robin.
    fn slots(&self, now: Cycle) -> [u32; 2] {
        let w = self.config.superscalar_width as u64;
        let lim = self.queues[3].limit;
        let total = lim[0] as u64 + lim[1] as u64;
        if total == 0 {
            return [0, 0];
        }
        let mut s = [
            (w * lim[0] as u64 / total) as u32,
            (w * lim[1] as u64 / total) as u32,
        ];
        let mut rem = w as u32 - s[0] - s[1];
        let mut t = (now % 2) as usize;
        while rem > 0 {
            if lim[t] > 0 {
                s[t] += 1;
                rem -= 1;
            }
            t ^= 1;
        }
        s
    }

    fn usage_snapshot(&self, t: ThreadId) -> [u32; 7] {
        self.queues.each_ref().map(|q| q.usage[t.index()])
    }

    /// Advances this core by one cycle.
    pub fn step<W: Workload>(
        &mut self,
        now: Cycle,
        workload: &mut W,
        uncore: &mut Uncore,
        events: &mut CycleEvents,
        stores: &mut Vec<u64>,
    ) -> Result<(), SimError> {
        let slots = self.slots(now);
        let first = (now % 2) as usize;
        let order = [ThreadId::ALL[first], ThreadId::ALL[first ^ 1]];

        for t in order {
            self.commit(t, now, slots[t.index()], workload, events, stores);
        }
        let mut fu_free = [
            self.fu.int_units,
            self.fu.fp_units,
            self.fu.vec_units,
            self.fu.load_ports,
            self.fu.store_ports,
        ];
        for t in order {
            self.issue(t, now, slots[t.index()], &mut fu_free, uncore, events);
        }
        if !self.gated {
            for t in ThreadId::ALL {
                self.dispatch(t, now, slots[t.index()], events)?;
            }
            for t in ThreadId::ALL {
                self.fetch(t, now, slots[t.index()], workload, uncore)?;
            }
        }

        self.stats.cycles += 1;
        for (i, q) in self.queues.iter().enumerate() {
            for t in 0..2 {
                let o = &mut self.stats.occupancy[i][t];
                o.sum += q.usage[t] as u64;
                o.max = o.max.max(q.usage[t]);
            }
        }
        debug_assert!(
            self.queues.iter().all(|q| q.is_safe()),
            "partition safety violated at cycle {now}"
        );
        Ok(())
    }

    fn commit<W: Workload>(
        &mut self,
        t: ThreadId,
        now: Cycle,
        slots: u32,
        workload: &mut W,
        events: &mut CycleEvents,
        stores: &mut Vec<u64>,
    ) {
        for _ in 0..slots {
            let ts = &mut self.threads[t.index()];
            match ts.rob.front() {
                Some(e) if e.issued && e.done <= now => {}
                _ => break,
            }
            let e = ts.rob.pop_front().unwrap();
            self.queues[3].release(t, 1);
            match e.op.class {
                OpClass::Load => self.queues[1].release(t, 1),
                OpClass::Store => {
                    self.queues[2].release(t, 1);
                    let addr = e.op.mem_addr.expect("store without address");
                    self.caches.store_commit(t, addr);
                    stores.push(line_of(addr));
                }
                _ => {}
            }
            if let Some(k) = e.op.class.dest_regs() {
                self.queues[queue_slot(k).unwrap()].release(t, 1);
            }
            self.stats.committed[t.index()] += 1;
            if e.op.hook != OpHook::None {
                workload.on_commit(self.id, t, &e.op, now);
                events.packet_events.push((self.id, t, e.op.hook));
            }
            events.commits.push(CommitRecord {
                core: self.id,
                thread: t,
                seq: e.op.seq,
                class: e.op.class,
                cycle: now,
            });
            if self.trace_enabled {
                events.trace.push(TraceRecord {
                    cycle: now,
                    core: self.id,
                    thread: t,
                    stage: Stage::Commit,
                    class: e.op.class,
                    usage: self.usage_snapshot(t),
                });
            }
        }
    }

    fn issue(
        &mut self,
        t: ThreadId,
        now: Cycle,
        slots: u32,
        fu_free: &mut [u32; 5],
        uncore: &mut Uncore,
        events: &mut CycleEvents,
    ) {
        let ti = t.index();
        let mut issued = 0u32;
        let mut i = 0;
        while i < self.threads[ti].iq.len() && issued < slots {
            let ts = &mut self.threads[ti];
            let entry = &ts.iq[i];
            if entry.dispatched >= now {
                i += 1;
                continue;
            }
            let seq = entry.seq;
            let ready_at = match entry.ready_at {
                Some(r) => r,
                None => {
                    let head = ts.rob.front().unwrap().op.seq;
                    let rob_e = &ts.rob[(seq - head) as usize];
                    let mut r = 0;
                    for &d in &rob_e.op.deps {
                        let done = ts.done_of(d);
                        r = r.max(done);
                        if done == NOT_DONE {
                            break;
                        }
                    }
                    if r != NOT_DONE {
                        ts.iq[i].ready_at = Some(r);
                    }
                    r
                }
            };
            if ready_at > now {
                i += 1;
                continue;
            }
            let head = ts.rob.front().unwrap().op.seq;
            let idx = (seq - head) as usize;
            let class = ts.rob[idx].op.class;
            let unit = match class {
                OpClass::IntAlu | OpClass::Branch => 0,
                OpClass::FpAlu => 1,
                OpClass::VecAlu => 2,
                OpClass::Load => 3,
                OpClass::Store => 4,
            };
            if fu_free[unit] == 0 {
                i += 1;
                continue;
            }
            fu_free[unit] -= 1;
            let op = &ts.rob[idx].op;
            let latency = match class {
                OpClass::Load => {
                    let addr = op.mem_addr.expect("load without address");
                    self.caches.data_access(t, addr, uncore).max(1)
                }
                OpClass::Store => {
                    let addr = op.mem_addr.expect("store without address");
                    let walk = if self
                        .caches
                        .dtlb
                        .access(t, addr >> crate::cache::DATA_PAGE_SHIFT)
                    {
                        0
                    } else {
                        self.config.tlb_miss_penalty
                    };
                    op.exec_latency + walk
                }
                _ => op.exec_latency,
            };
            let ts = &mut self.threads[ti];
            let done = now + latency as Cycle;
            let e = &mut ts.rob[idx];
            e.issued = true;
            e.done = done;
            if e.op.mispredict && ts.branch_block == Some(seq) {
                ts.branch_block = None;
                ts.fetch_resume = ts
                    .fetch_resume
                    .max(done + self.config.mispredict_penalty as Cycle);
            }
            ts.iq.remove(i);
            self.queues[0].release(t, 1);
            self.stats.issued_by_class[ti][class as usize] += 1;
            issued += 1;
            if self.trace_enabled {
                events.trace.push(TraceRecord {
                    cycle: now,
                    core: self.id,
                    thread: t,
                    stage: Stage::Issue,
                    class,
                    usage: self.usage_snapshot(t),
                });
            }
        }
    }

    fn dispatch(
        &mut self,
        t: ThreadId,
        now: Cycle,
        slots: u32,
        events: &mut CycleEvents,
    ) -> Result<(), SimError> {
        let ti = t.index();
        let mut zero_limit_hit: Option<StructureKind> = None;
        for _ in 0..slots {
            let ts = &self.threads[ti];
            let Some((op, fetched)) = ts.fetch_buf.front() else {
                break;
            };
            if *fetched >= now {
                break;
            }
            let class = op.class;
            let mut need: [Option<StructureKind>; 4] = [
                Some(StructureKind::Rob),
                Some(StructureKind::Iq),
                None,
                None,
            ];
            need[2] = match class {
                OpClass::Load => Some(StructureKind::Lq),
                OpClass::Store => Some(StructureKind::Sq),
                _ => None,
            };
            need[3] = class.dest_regs();
            let blocked = need
                .iter()
                .flatten()
                .copied()
                .find(|&k| !self.queues[queue_slot(k).unwrap()].has_room(t, 1));
            if let Some(kind) = blocked {
                self.threads[ti].ctx.stalled_on = StallReason::from_kind(kind);
                if self.scheme.limit(kind, t) == 0 {
                    zero_limit_hit = Some(kind);
                }
                break;
            }
            for k in need.iter().flatten() {
                let granted = self.queues[queue_slot(*k).unwrap()].try_allocate(t, 1);
                debug_assert_eq!(granted, Allocation::Granted);
            }
            let ts = &mut self.threads[ti];
            let (op, _) = ts.fetch_buf.pop_front().unwrap();
            ts.ctx.stalled_on = StallReason::None;
            ts.zero_limit_stall = 0;
            ts.iq.push(IqEntry {
                seq: op.seq,
                dispatched: now,
                ready_at: if op.deps.is_empty() { Some(0) } else { None },
            });
            ts.rob.push_back(RobEntry {
                op,
                issued: false,
                done: NOT_DONE,
            });
            self.stats.dispatched[ti] += 1;
            if self.trace_enabled {
                events.trace.push(TraceRecord {
                    cycle: now,
                    core: self.id,
                    thread: t,
                    stage: Stage::Dispatch,
                    class,
                    usage: self.usage_snapshot(t),
                });
            }
        }
        if let Some(kind) = zero_limit_hit {
            let ts = &mut self.threads[ti];
            ts.zero_limit_stall += 1;
            if ts.zero_limit_stall >= ZERO_LIMIT_STALL_CYCLES && !ts.stall_reported {
                ts.stall_reported = true;
                events.warnings.push(format!(
                    "core {} thread {} stalled {} cycles on zero-limit {}",
                    self.id,
                    t.name(),
                    ts.zero_limit_stall,
                    kind
                ));
                return Err(SimError::Stall {
                    thread: t.name(),
                    structure: kind.name(),
                    cycles: ts.zero_limit_stall,
                });
            }
        }
        Ok(())
    }

    fn fetch<W: Workload>(
        &mut self,
        t: ThreadId,
        now: Cycle,
        slots: u32,
        workload: &mut W,
        uncore: &mut Uncore,
    ) -> Result<(), SimError> {
        let ti = t.index();
        let buf_cap = 2 * self.config.superscalar_width as usize;
        {
            let ts = &self.threads[ti];
            if ts.fetch_resume > now || ts.branch_block.is_some() {
                return Ok(());
            }
        }
        for _ in 0..slots {
            let ts = &mut self.threads[ti];
            if ts.fetch_buf.len() >= buf_cap {
                break;
            }
            let op = match ts.staged.take().or_else(|| ts.replay.pop_front()) {
                Some(op) => op,
                None => match workload.next_op(self.id, t, now) {
                    Some(op) => op,
                    None => break,
                },
            };
            let ts = &mut self.threads[ti];
            if op.seq != ts.next_seq {
                return Err(SimError::config(format!(
                    "thread {} fetched op {} but expected sequence {}",
                    t.name(),
                    op.seq,
                    ts.next_seq
                )));
            }
            if let Err(dep) = op.well_formed() {
                return Err(SimError::DanglingDependency {
                    thread: t.name(),
                    seq: op.seq,
                    dep,
                });
            }
            if !op.shape_ok() {
                return Err(SimError::config(format!(
                    "malformed op {} of thread {}",
                    op.seq,
                    t.name()
                )));
            }
            let line = line_of(op.pc);
            if ts.last_fetch_line != Some(line) {
                ts.last_fetch_line = Some(line);
                let lat = self.caches.inst_access(t, op.pc, uncore);
                if lat > 0 {
                    let ts = &mut self.threads[ti];
                    ts.staged = Some(op);
                    ts.fetch_resume = now + lat as Cycle;
                    ts.ctx.stalled_on = StallReason::Mem;
                    break;
                }
            }
            let mut stop = false;
            if op.class == OpClass::Branch {
                if !self.caches.btb.access(t, op.pc) {
                    self.stats.btb_misses[ti] += 1;
                    self.threads[ti].fetch_resume = now + BTB_MISS_BUBBLE;
                    stop = true;
                }
                if op.mispredict {
                    self.stats.mispredicts[ti] += 1;
                    self.threads[ti].branch_block = Some(op.seq);
                    stop = true;
                }
            }
            let ts = &mut self.threads[ti];
            ts.next_seq += 1;
            ts.ctx.fetch_pc = op.pc;
            if op.is_spin_poll {
                ts.ctx.stalled_on = StallReason::Ring;
            }
            ts.fetch_buf.push_back((op, now));
            self.stats.fetched[ti] += 1;
            if stop {
                break;
            }
        }
        Ok(())
    }

    /// Discards every in-flight op of both threads; they are re-fetched
    /// after the refill penalty. Returns the penalty.
    pub fn flush(&mut self, now: Cycle) -> u64 {
        let penalty = self.config.flush_penalty as u64;
        for ts in self.threads.iter_mut() {
            let mut back: VecDeque<MicroOp> =
                VecDeque::with_capacity(ts.rob.len() + ts.fetch_buf.len());
            back.extend(ts.rob.drain(..).map(|e| e.op));
            back.extend(ts.fetch_buf.drain(..).map(|(op, _)| op));
            back.extend(ts.staged.take());
            self.stats.flushed_ops += back.len() as u64;
            if let Some(first) = back.front() {
                ts.next_seq = first.seq;
            }
            back.extend(ts.replay.drain(..));
            ts.replay = back;
            ts.iq.clear();
            ts.branch_block = None;
            ts.last_fetch_line = None;
            ts.fetch_resume = now + penalty;
            ts.ctx.stalled_on = StallReason::None;
        }
        for q in self.queues.iter_mut() {
            q.usage = [0, 0];
        }
        penalty
    }

    /// Reprograms every limit register. Callers empty the pipeline first.
    fn program_limits(&mut self, scheme: PartitionScheme) {
        for q in self.queues.iter_mut() {
            q.limit = scheme.limits[q.kind.index()];
            debug_assert!(q.is_safe());
        }
        self.caches.apply_scheme(&scheme);
        self.scheme = scheme;
    }

    /// Functional warm-up step: up to `superscalar_width` ops per thread
    /// with no timing, caches and predictors touched, hooks applied
    /// immediately.
    fn functional_step<W: Workload>(
        &mut self,
        now: Cycle,
        workload: &mut W,
        uncore: &mut Uncore,
        stores: &mut Vec<u64>,
    ) -> Result<(), SimError> {
        for t in ThreadId::ALL {
            let ti = t.index();
            if self.queues[3].limit[ti] == 0 {
                continue;
            }
            for _ in 0..self.config.superscalar_width {
                let op = match self.threads[ti].replay.pop_front() {
                    Some(op) => op,
                    None => match workload.next_op(self.id, t, now) {
                        Some(op) => op,
                        None => break,
                    },
                };
                let ts = &mut self.threads[ti];
                if op.seq != ts.next_seq {
                    return Err(SimError::config(format!(
                        "thread {} produced op {} but expected sequence {}",
                        t.name(),
                        op.seq,
                        ts.next_seq
                    )));
                }
                ts.next_seq += 1;
                ts.last_fetch_line = None;
                self.caches.inst_access(t, op.pc, uncore);
                match op.class {
                    OpClass::Load => {
                        self.caches.data_access(t, op.mem_addr.unwrap(), uncore);
                    }
                    OpClass::Store => {
                        let addr = op.mem_addr.unwrap();
                        self.caches.store_commit(t, addr);
                        stores.push(line_of(addr));
                    }
                    OpClass::Branch => {
                        self.caches.btb.access(t, op.pc);
                    }
                    _ => {}
                }
                if op.hook != OpHook::None {
                    workload.on_commit(self.id, t, &op, now);
                }
            }
        }
        Ok(())
    }

    pub fn reset_stats(&mut self) {
        self.stats = CoreStats::default();
        self.caches.reset_stats();
    }
}

/// Cores advanced in lockstep around a shared LLC, DRAM and workload.
pub struct Machine<W: Workload> {
    pub cores: Vec<Core>,
    pub uncore: Uncore,
    pub workload: W,
    now: Cycle,
    dma: Vec<u64>,
    stores: Vec<Vec<u64>>,
    trace: Option<Box<dyn Write>>,
}

impl<W: Workload> Machine<W> {
    pub fn new(cores: Vec<Core>, uncore: Uncore, workload: W) -> Self {
        let n = cores.len();
        Machine {
            cores,
            uncore,
            workload,
            now: 0,
            dma: Vec::new(),
            stores: vec![Vec::new(); n],
            trace: None,
        }
    }

    /// A single core with its own LLC slice.
    pub fn single(
        config: CoreConfig,
        scheme: PartitionScheme,
        workload: W,
    ) -> Result<Self, SimError> {
        let uncore = Uncore::for_core(&config, 1);
        let core = Core::new(0, config, scheme)?;
        Ok(Self::new(vec![core], uncore, workload))
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn core(&self) -> &Core {
        &self.cores[0]
    }

    pub fn core_mut(&mut self) -> &mut Core {
        &mut self.cores[0]
    }

    /// Streams per-op trace lines to `out`.
    pub fn set_trace(&mut self, out: Box<dyn Write>) -> Result<(), SimError> {
        let mut out = out;
        writeln!(out, "{TRACE_HEADER}")?;
        self.trace = Some(out);
        for c in self.cores.iter_mut() {
            c.trace_enabled = true;
        }
        Ok(())
    }

    fn apply_dma(&mut self) {
        self.dma.clear();
        self.workload.tick(self.now, &mut self.dma);
        for &line in &self.dma {
            self.uncore.install(line);
            for c in self.cores.iter_mut() {
                c.caches.invalidate(line);
            }
        }
    }

    fn propagate_stores(&mut self) {
        if self.cores.len() == 1 {
            self.stores[0].clear();
            return;
        }
        for i in 0..self.cores.len() {
            let lines = std::mem::take(&mut self.stores[i]);
            for &line in &lines {
                self.uncore.install(line);
                for (j, c) in self.cores.iter_mut().enumerate() {
                    if j != i {
                        c.caches.invalidate(line);
                    }
                }
            }
            self.stores[i] = lines;
            self.stores[i].clear();
        }
    }

    /// Advances every core by exactly one cycle.
    pub fn step(&mut self) -> Result<CycleEvents, SimError> {
        let mut events = CycleEvents {
            cycle: self.now,
            ..Default::default()
        };
        self.uncore.begin_cycle(self.now);
        self.apply_dma();
        for (i, core) in self.cores.iter_mut().enumerate() {
            core.step(
                self.now,
                &mut self.workload,
                &mut self.uncore,
                &mut events,
                &mut self.stores[i],
            )?;
        }
        self.propagate_stores();
        if let Some(out) = self.trace.as_mut() {
            for r in &events.trace {
                writeln!(out, "{}", r.to_line())?;
            }
        }
        self.now += 1;
        Ok(events)
    }

    pub fn run_for(&mut self, cycles: u64) -> Result<(), SimError> {
        for _ in 0..cycles {
            self.step()?;
        }
        Ok(())
    }

    /// Warm-up pass with no timing model.
    pub fn functional_step(&mut self) -> Result<(), SimError> {
        self.uncore.begin_cycle(self.now);
        self.apply_dma();
        for (i, core) in self.cores.iter_mut().enumerate() {
            core.functional_step(
                self.now,
                &mut self.workload,
                &mut self.uncore,
                &mut self.stores[i],
            )?;
        }
        self.propagate_stores();
        self.now += 1;
        Ok(())
    }

    pub fn flush(&mut self, core: usize) -> u64 {
        let now = self.now;
        self.cores[core].flush(now)
    }

    /// Gates fetch on `core` and steps the machine until both of its ROB
    /// partitions are empty. Returns the elapsed cycles.
    pub fn drain(&mut self, core: usize) -> Result<u64, SimError> {
        let start = self.now;
        self.cores[core].gated = true;
        let res = (|| {
            while !self.cores[core].is_empty() {
                self.step()?;
            }
            Ok(())
        })();
        self.cores[core].gated = false;
        res.map(|_| self.now - start)
    }

    /// Re-partitions `core` with `scheme` after a flush or drain.
    pub fn apply_strp(
        &mut self,
        core: usize,
        scheme: PartitionScheme,
        mode: RepartitionMode,
    ) -> Result<RepartitionReceipt, SimError> {
        scheme
            .validate(self.cores[core].config())
            .map_err(SimError::InvalidScheme)?;
        let applied_at = self.now;
        let old_label = self.cores[core].label();
        let new_label = scheme.label;
        let penalty = match mode {
            RepartitionMode::Flush => self.flush(core),
            RepartitionMode::Drain => self.drain(core)?,
        };
        self.cores[core].program_limits(scheme);
        Ok(RepartitionReceipt {
            applied_at,
            mode,
            penalty,
            old_label,
            new_label,
        })
    }

    pub fn reset_stats(&mut self) {
        for c in self.cores.iter_mut() {
            c.reset_stats();
        }
        self.uncore.reset_stats();
    }
}

/// Two fixed op streams, one per hardware thread, on a single core.
#[derive(Clone, Debug, Default)]
pub struct StreamWorkload {
    streams: [VecDeque<MicroOp>; 2],
    pub hooks_seen: Vec<(ThreadId, OpHook, Cycle)>,
}

impl StreamWorkload {
    pub fn new(sdt: Vec<MicroOp>, main: Vec<MicroOp>) -> Self {
        StreamWorkload {
            streams: [sdt.into(), main.into()],
            hooks_seen: Vec::new(),
        }
    }

    pub fn remaining(&self, thread: ThreadId) -> usize {
        self.streams[thread.index()].len()
    }
}

impl Workload for StreamWorkload {
    fn next_op(&mut self, _core: usize, thread: ThreadId, _now: Cycle) -> Option<MicroOp> {
        self.streams[thread.index()].pop_front()
    }

    fn on_commit(&mut self, _core: usize, thread: ThreadId, op: &MicroOp, now: Cycle) {
        self.hooks_seen.push((thread, op.hook, now));
    }
}
