//! Core configuration: capacities of every partitionable structure, cache
//! geometry, memory latencies and functional-unit counts.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const LINE_BYTES: u64 = 64;

/// Simulated clock cycle.
pub type Cycle = u64;

/// The two hardware threads of a physical core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ThreadId {
    /// Data-delivery thread.
    Sdt = 0,
    /// Data-processing (application) thread.
    Main = 1,
}

impl ThreadId {
    pub const ALL: [ThreadId; 2] = [ThreadId::Sdt, ThreadId::Main];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> ThreadId {
        match self {
            ThreadId::Sdt => ThreadId::Main,
            ThreadId::Main => ThreadId::Sdt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ThreadId::Sdt => "sdt",
            ThreadId::Main => "main",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub bytes: u64,
    pub ways: u32,
}

impl CacheGeometry {
    pub const fn new(bytes: u64, ways: u32) -> Self {
        Self { bytes, ways }
    }

    pub fn lines(&self) -> u64 {
        self.bytes / LINE_BYTES
    }

    pub fn sets(&self) -> u64 {
        (self.lines() / self.ways as u64).max(1)
    }

    fn validate(&self, name: &str) -> Result<(), SimError> {
        let lines = self.bytes / LINE_BYTES;
        if self.bytes == 0 || self.bytes % LINE_BYTES != 0 || !lines.is_power_of_two() {
            return Err(SimError::config(format!(
                "{name}: {} bytes is not a power-of-two number of 64 B lines",
                self.bytes
            )));
        }
        if self.ways == 0 || lines % self.ways as u64 != 0 {
            return Err(SimError::config(format!(
                "{name}: {} ways does not divide {lines} lines",
                self.ways
            )));
        }
        Ok(())
    }
}

/// Functional units, shared between the hardware threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuConfig {
    pub int_units: u32,
    pub fp_units: u32,
    pub vec_units: u32,
    pub load_ports: u32,
    pub store_ports: u32,
}

impl FuConfig {
    pub const BEEFY: FuConfig = FuConfig {
        int_units: 6,
        fp_units: 2,
        vec_units: 2,
        load_ports: 2,
        store_ports: 1,
    };

    /// Beefy unit counts scaled by `width / 12`, never below one unit.
    pub fn scaled_for(width: u32) -> FuConfig {
        let scale = |n: u32| ((n as f64 * width as f64 / 12.0).round() as u32).max(1);
        let b = Self::BEEFY;
        FuConfig {
            int_units: scale(b.int_units),
            fp_units: scale(b.fp_units),
            vec_units: scale(b.vec_units),
            load_ports: scale(b.load_ports),
            store_ports: scale(b.store_ports),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub superscalar_width: u32,
    pub iq_entries: u32,
    pub lq_entries: u32,
    pub sq_entries: u32,
    pub rob_entries: u32,
    pub int_regs: u32,
    pub fp_regs: u32,
    pub vec_regs: u32,
    pub itlb_entries: u32,
    pub dtlb_entries: u32,
    pub btb_entries: u32,
    pub l1i: CacheGeometry,
    pub l1d: CacheGeometry,
    pub l2: CacheGeometry,
    pub l3_slice: CacheGeometry,
    pub l1_latency: u32,
    pub l2_latency: u32,
    pub l3_latency: u32,
    pub dram_latency_ns: f64,
    pub clock_ghz: f64,
    pub fu: FuConfig,
    /// Page-walk cost added on a TLB miss.
    pub tlb_miss_penalty: u32,
    pub mispredict_penalty: u32,
    /// Fetch refill penalty paid after a pipeline flush.
    pub flush_penalty: u32,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self::beefy()
    }
}

impl CoreConfig {
    /// The full-size core.
    pub fn beefy() -> Self {
        CoreConfig {
            superscalar_width: 12,
            iq_entries: 194,
            lq_entries: 144,
            sq_entries: 112,
            rob_entries: 512,
            int_regs: 448,
            fp_regs: 256,
            vec_regs: 400,
            itlb_entries: 64,
            dtlb_entries: 64,
            btb_entries: 8192,
            l1i: CacheGeometry::new(32 << 10, 8),
            l1d: CacheGeometry::new(64 << 10, 16),
            l2: CacheGeometry::new(1 << 20, 16),
            l3_slice: CacheGeometry::new(2 << 20, 16),
            l1_latency: 4,
            l2_latency: 14,
            l3_latency: 40,
            dram_latency_ns: 100.0,
            clock_ghz: 3.0,
            fu: FuConfig::BEEFY,
            tlb_miss_penalty: 30,
            mispredict_penalty: 15,
            flush_penalty: 200,
        }
    }

    /// The reduced configuration that suffices for the data-delivery thread.
    pub fn minimalist() -> Self {
        CoreConfig {
            superscalar_width: 3,
            iq_entries: 32,
            lq_entries: 32,
            sq_entries: 32,
            rob_entries: 128,
            int_regs: 92,
            fp_regs: 0,
            vec_regs: 46,
            itlb_entries: 3,
            dtlb_entries: 10,
            btb_entries: 256,
            l1i: CacheGeometry::new(4 << 10, 8),
            l1d: CacheGeometry::new(16 << 10, 16),
            l2: CacheGeometry::new(512 << 10, 16),
            l3_slice: CacheGeometry::new(256 << 10, 16),
            fu: FuConfig::scaled_for(3),
            ..Self::beefy()
        }
    }

    /// DRAM latency converted to core cycles.
    pub fn dram_cycles(&self) -> u32 {
        (self.dram_latency_ns * self.clock_ghz).round() as u32
    }

    pub fn clock_hz(&self) -> f64 {
        self.clock_ghz * 1e9
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let counts = [
            ("superscalar_width", self.superscalar_width),
            ("iq_entries", self.iq_entries),
            ("lq_entries", self.lq_entries),
            ("sq_entries", self.sq_entries),
            ("rob_entries", self.rob_entries),
            ("int_regs", self.int_regs),
            ("itlb_entries", self.itlb_entries),
            ("dtlb_entries", self.dtlb_entries),
            ("btb_entries", self.btb_entries),
            ("int_units", self.fu.int_units),
            ("load_ports", self.fu.load_ports),
            ("store_ports", self.fu.store_ports),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(SimError::config(format!("{name} must be at least 1")));
            }
        }
        self.l1i.validate("l1i")?;
        self.l1d.validate("l1d")?;
        self.l2.validate("l2")?;
        self.l3_slice.validate("l3")?;
        if !(self.clock_ghz > 0.0) || !(self.dram_latency_ns >= 0.0) {
            return Err(SimError::config(
                "clock_ghz must be > 0 and dram_latency_ns >= 0",
            ));
        }
        Ok(())
    }
}
