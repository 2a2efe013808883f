//! Synthetic micro-op records driving the pipeline.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::partition::StructureKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    IntAlu,
    FpAlu,
    VecAlu,
    Load,
    Store,
    Branch,
}

impl OpClass {
    pub const ALL: [OpClass; 6] = [
        OpClass::IntAlu,
        OpClass::FpAlu,
        OpClass::VecAlu,
        OpClass::Load,
        OpClass::Store,
        OpClass::Branch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::IntAlu => "int_alu",
            OpClass::FpAlu => "fp_alu",
            OpClass::VecAlu => "vec_alu",
            OpClass::Load => "load",
            OpClass::Store => "store",
            OpClass::Branch => "branch",
        }
    }

    /// Register file the op renames its destination into, if any.
    pub fn dest_regs(self) -> Option<StructureKind> {
        match self {
            OpClass::IntAlu | OpClass::Load => Some(StructureKind::IntReg),
            OpClass::FpAlu => Some(StructureKind::FpReg),
            OpClass::VecAlu => Some(StructureKind::VecReg),
            OpClass::Store | OpClass::Branch => None,
        }
    }

    pub fn is_mem(self) -> bool {
        matches!(self, OpClass::Load | OpClass::Store)
    }

    pub fn default_latency(self) -> u32 {
        match self {
            OpClass::IntAlu | OpClass::Branch | OpClass::Store | OpClass::Load => 1,
            OpClass::FpAlu => 4,
            OpClass::VecAlu => 3,
        }
    }
}

/// Side effect delivered to the workload when an op commits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpHook {
    None,
    /// Last op of a packet's delivery template.
    DeliveryDone(u64),
    /// Last op of a packet's processing template.
    ProcessingDone(u64),
}

pub type Deps = SmallVec<[u64; 3]>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicroOp {
    /// Position in the owning thread's op stream.
    pub seq: u64,
    pub class: OpClass,
    /// Sequence numbers of older ops whose results this op consumes.
    pub deps: Deps,
    pub exec_latency: u32,
    pub mem_addr: Option<u64>,
    pub mem_bytes: u32,
    /// Code address, drives ITLB/L1i/BTB lookups.
    pub pc: u64,
    pub is_spin_poll: bool,
    /// Branch resolves against the predicted direction.
    pub mispredict: bool,
    pub hook: OpHook,
}

impl MicroOp {
    pub fn new(seq: u64, class: OpClass, pc: u64) -> Self {
        MicroOp {
            seq,
            class,
            deps: Deps::new(),
            exec_latency: class.default_latency(),
            mem_addr: None,
            mem_bytes: 0,
            pc,
            is_spin_poll: false,
            mispredict: false,
            hook: OpHook::None,
        }
    }

    pub fn int(seq: u64, pc: u64) -> Self {
        Self::new(seq, OpClass::IntAlu, pc)
    }

    pub fn load(seq: u64, pc: u64, addr: u64, bytes: u32) -> Self {
        let mut op = Self::new(seq, OpClass::Load, pc);
        op.mem_addr = Some(addr);
        op.mem_bytes = bytes;
        op
    }

    pub fn store(seq: u64, pc: u64, addr: u64, bytes: u32) -> Self {
        let mut op = Self::new(seq, OpClass::Store, pc);
        op.mem_addr = Some(addr);
        op.mem_bytes = bytes;
        op
    }

    pub fn with_deps(mut self, deps: impl IntoIterator<Item = u64>) -> Self {
        self.deps.extend(deps);
        self
    }

    /// Every dependency names an older op. Returns the first offending dep.
    pub fn well_formed(&self) -> Result<(), u64> {
        if let Some(&bad) = self.deps.iter().find(|&&d| d >= self.seq) {
            return Err(bad);
        }
        Ok(())
    }

    /// Memory ops carry an address and only memory ops do; latency is non-zero.
    pub fn shape_ok(&self) -> bool {
        self.exec_latency >= 1 && self.mem_addr.is_some() == self.class.is_mem()
    }
}
