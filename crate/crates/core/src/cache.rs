//! Private cache hierarchy (way-partitioned L1d/L2/L1i, entry-partitioned
//! TLBs and BTB) plus the shared last-level cache and DRAM.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::config::{CacheGeometry, CoreConfig, Cycle, ThreadId, LINE_BYTES};
use crate::partition::{PartitionScheme, StructureKind};

/// Data pages are 2 MB hugepages, as a userspace packet stack maps them.
pub const DATA_PAGE_SHIFT: u32 = 21;
pub const CODE_PAGE_SHIFT: u32 = 12;

const INVALID: u64 = u64::MAX;

#[inline]
pub fn line_of(addr: u64) -> u64 {
    addr / LINE_BYTES
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HitMiss {
    pub hits: u64,
    pub misses: u64,
}

impl HitMiss {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }
}

/// Set-associative LRU cache. Lookups hit in any way; fills are confined to
/// the requesting thread's way range.
#[derive(Clone, Debug)]
pub struct SetAssocCache {
    sets: u64,
    ways: usize,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    clock: u64,
    ranges: [(usize, usize); 2],
    pub stats: [HitMiss; 2],
}

impl SetAssocCache {
    pub fn new(geom: CacheGeometry) -> Self {
        let sets = geom.sets();
        let ways = geom.ways as usize;
        let n = sets as usize * ways;
        SetAssocCache {
            sets,
            ways,
            tags: vec![INVALID; n],
            stamps: vec![0; n],
            clock: 0,
            ranges: [(0, ways), (0, ways)],
            stats: Default::default(),
        }
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    /// Way-partitions the cache: SDT owns `[0, sdt)`, MAIN `[sdt, sdt+main)`.
    pub fn set_way_limits(&mut self, sdt: u32, main: u32) {
        let sdt = (sdt as usize).min(self.ways);
        let main = (main as usize).min(self.ways - sdt);
        self.ranges = [(0, sdt), (sdt, sdt + main)];
    }

    /// Lets both threads fill into every way.
    pub fn set_shared(&mut self) {
        self.ranges = [(0, self.ways), (0, self.ways)];
    }

    #[inline]
    fn base(&self, line: u64) -> usize {
        (line & (self.sets - 1)) as usize * self.ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        let b = self.base(line);
        (b..b + self.ways).find(|&i| self.tags[i] == line)
    }

    /// Probes without changing any state.
    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    pub fn lookup(&mut self, thread: ThreadId, line: u64) -> bool {
        self.clock += 1;
        match self.find(line) {
            Some(i) => {
                self.stamps[i] = self.clock;
                self.stats[thread.index()].hits += 1;
                true
            }
            None => {
                self.stats[thread.index()].misses += 1;
                false
            }
        }
    }

    pub fn fill(&mut self, thread: ThreadId, line: u64) {
        if self.find(line).is_some() {
            return;
        }
        let (lo, hi) = self.ranges[thread.index()];
        if lo == hi {
            return;
        }
        let b = self.base(line);
        let victim = (b + lo..b + hi)
            .min_by_key(|&i| {
                if self.tags[i] == INVALID {
                    0
                } else {
                    self.stamps[i]
                }
            })
            .expect("non-empty way range");
        self.clock += 1;
        self.tags[victim] = line;
        self.stamps[victim] = self.clock;
    }

    pub fn invalidate(&mut self, line: u64) {
        if let Some(i) = self.find(line) {
            self.tags[i] = INVALID;
        }
    }

    pub fn reset_stats(&mut self) {
        self.stats = Default::default();
    }
}

/// Fully associative LRU table with a per-thread entry limit (TLBs, BTB).
#[derive(Clone, Debug)]
pub struct EntryTable {
    limit: [u32; 2],
    keys: [HashMap<u64, u64>; 2],
    lru: [BTreeMap<u64, u64>; 2],
    clock: u64,
    pub stats: [HitMiss; 2],
}

impl EntryTable {
    pub fn new(limit: [u32; 2]) -> Self {
        EntryTable {
            limit,
            keys: Default::default(),
            lru: Default::default(),
            clock: 0,
            stats: Default::default(),
        }
    }

    pub fn usage(&self, thread: ThreadId) -> u32 {
        self.keys[thread.index()].len() as u32
    }

    pub fn limit(&self, thread: ThreadId) -> u32 {
        self.limit[thread.index()]
    }

    /// Looks `key` up, inserting it on a miss (evicting the LRU entry when
    /// the thread is at its limit). Returns whether it hit.
    pub fn access(&mut self, thread: ThreadId, key: u64) -> bool {
        let t = thread.index();
        self.clock += 1;
        let now = self.clock;
        if let Some(stamp) = self.keys[t].get_mut(&key) {
            self.lru[t].remove(stamp);
            *stamp = now;
            self.lru[t].insert(now, key);
            self.stats[t].hits += 1;
            return true;
        }
        self.stats[t].misses += 1;
        if self.limit[t] == 0 {
            return false;
        }
        if self.keys[t].len() as u32 >= self.limit[t] {
            self.evict_one(t);
        }
        self.keys[t].insert(key, now);
        self.lru[t].insert(now, key);
        false
    }

    fn evict_one(&mut self, t: usize) {
        if let Some((_, key)) = self.lru[t].pop_first() {
            self.keys[t].remove(&key);
        }
    }

    /// Reprograms the limits, evicting LRU entries of any shrunken partition.
    pub fn set_limits(&mut self, limit: [u32; 2]) {
        self.limit = limit;
        for t in 0..2 {
            while self.keys[t].len() as u32 > self.limit[t] {
                self.evict_one(t);
            }
        }
    }

    pub fn reset_stats(&mut self) {
        self.stats = Default::default();
    }
}

/// Shared last-level cache and DRAM.
#[derive(Clone, Debug)]
pub struct Uncore {
    pub llc: SetAssocCache,
    pub l3_latency: u32,
    pub dram_cycles: u32,
    /// LLC requests serviced per cycle before queueing; `None` disables
    /// contention.
    pub llc_ports: Option<u32>,
    cycle: Cycle,
    accesses_this_cycle: u32,
    pub dram_accesses: u64,
    pub llc_queue_cycles: u64,
}

impl Uncore {
    pub fn new(llc: CacheGeometry, l3_latency: u32, dram_cycles: u32) -> Self {
        Uncore {
            llc: SetAssocCache::new(llc),
            l3_latency,
            dram_cycles,
            llc_ports: Some(2),
            cycle: 0,
            accesses_this_cycle: 0,
            dram_accesses: 0,
            llc_queue_cycles: 0,
        }
    }

    /// LLC built from `n_slices` per-core slices, two ports per slice.
    pub fn for_core(config: &CoreConfig, n_slices: u64) -> Self {
        let geom = CacheGeometry::new(config.l3_slice.bytes * n_slices, config.l3_slice.ways);
        let mut u = Self::new(geom, config.l3_latency, config.dram_cycles());
        u.llc_ports = Some(2 * n_slices as u32);
        u
    }

    pub fn begin_cycle(&mut self, now: Cycle) {
        if now != self.cycle {
            self.cycle = now;
            self.accesses_this_cycle = 0;
        }
    }

    /// Latency of an LLC access beyond the private levels, DRAM included on
    /// a miss. Fills the LLC.
    pub fn access(&mut self, thread: ThreadId, line: u64) -> u32 {
        let mut lat = self.l3_latency;
        if let Some(ports) = self.llc_ports {
            let queued = self.accesses_this_cycle / ports.max(1);
            lat += queued;
            self.llc_queue_cycles += queued as u64;
        }
        self.accesses_this_cycle += 1;
        if !self.llc.lookup(thread, line) {
            self.dram_accesses += 1;
            self.llc.fill(thread, line);
            lat += self.dram_cycles;
        }
        lat
    }

    /// Device or remote-core write landing in the LLC.
    pub fn install(&mut self, line: u64) {
        self.llc.fill(ThreadId::Sdt, line);
    }

    pub fn reset_stats(&mut self) {
        self.llc.reset_stats();
        self.dram_accesses = 0;
        self.llc_queue_cycles = 0;
    }
}

/// Per-core private memory structures.
#[derive(Clone, Debug)]
pub struct PrivateCaches {
    pub l1i: SetAssocCache,
    pub l1d: SetAssocCache,
    pub l2: SetAssocCache,
    pub itlb: EntryTable,
    pub dtlb: EntryTable,
    pub btb: EntryTable,
    l1_latency: u32,
    l2_latency: u32,
    tlb_miss_penalty: u32,
}

impl PrivateCaches {
    pub fn new(config: &CoreConfig, scheme: &PartitionScheme) -> Self {
        let mut p = PrivateCaches {
            l1i: SetAssocCache::new(config.l1i),
            l1d: SetAssocCache::new(config.l1d),
            l2: SetAssocCache::new(config.l2),
            itlb: EntryTable::new([0, 0]),
            dtlb: EntryTable::new([0, 0]),
            btb: EntryTable::new([0, 0]),
            l1_latency: config.l1_latency,
            l2_latency: config.l2_latency,
            tlb_miss_penalty: config.tlb_miss_penalty,
        };
        p.apply_scheme(scheme);
        p
    }

    pub fn apply_scheme(&mut self, scheme: &PartitionScheme) {
        let lim = |k: StructureKind| scheme.limits[k.index()];
        let [a, b] = lim(StructureKind::L1iWays);
        self.l1i.set_way_limits(a, b);
        let [a, b] = lim(StructureKind::L1dWays);
        self.l1d.set_way_limits(a, b);
        let [a, b] = lim(StructureKind::L2Ways);
        self.l2.set_way_limits(a, b);
        self.itlb.set_limits(lim(StructureKind::Itlb));
        self.dtlb.set_limits(lim(StructureKind::Dtlb));
        self.btb.set_limits(lim(StructureKind::Btb));
    }

    /// Load-to-use latency through DTLB, L1d, L2, LLC and DRAM.
    pub fn data_access(&mut self, thread: ThreadId, addr: u64, uncore: &mut Uncore) -> u32 {
        let mut lat = 0;
        if !self.dtlb.access(thread, addr >> DATA_PAGE_SHIFT) {
            lat += self.tlb_miss_penalty;
        }
        let line = line_of(addr);
        lat += self.l1_latency;
        if self.l1d.lookup(thread, line) {
            return lat;
        }
        lat += self.l2_latency;
        if !self.l2.lookup(thread, line) {
            lat += uncore.access(thread, line);
            self.l2.fill(thread, line);
        }
        self.l1d.fill(thread, line);
        lat
    }

    /// Fetch latency of a new code line through ITLB, L1i, L2 and beyond.
    /// Returns 0 for an L1i hit (fetch proceeds the same cycle).
    pub fn inst_access(&mut self, thread: ThreadId, pc: u64, uncore: &mut Uncore) -> u32 {
        let mut lat = 0;
        if !self.itlb.access(thread, pc >> CODE_PAGE_SHIFT) {
            lat += self.tlb_miss_penalty;
        }
        let line = line_of(pc);
        if self.l1i.lookup(thread, line) {
            return lat;
        }
        lat += self.l1_latency + self.l2_latency;
        if !self.l2.lookup(thread, line) {
            lat += uncore.access(thread, line);
            self.l2.fill(thread, line);
        }
        self.l1i.fill(thread, line);
        lat
    }

    /// Retired store: write-allocate into L1d.
    pub fn store_commit(&mut self, thread: ThreadId, addr: u64) {
        let line = line_of(addr);
        if !self.l1d.lookup(thread, line) {
            self.l1d.fill(thread, line);
        }
    }

    /// A line written by a device or another core.
    pub fn invalidate(&mut self, line: u64) {
        self.l1d.invalidate(line);
        self.l2.invalidate(line);
    }

    pub fn reset_stats(&mut self) {
        self.l1i.reset_stats();
        self.l1d.reset_stats();
        self.l2.reset_stats();
        self.itlb.reset_stats();
        self.dtlb.reset_stats();
        self.btb.reset_stats();
    }
}
