//! Programmable limit/usage register pairs, partition presets and scheme
//! validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{CoreConfig, Cycle, ThreadId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Iq,
    Lq,
    Sq,
    Rob,
    Btb,
    IntReg,
    FpReg,
    VecReg,
    Itlb,
    Dtlb,
    L1dWays,
    L2Ways,
    L1iWays,
}

impl StructureKind {
    pub const ALL: [StructureKind; 13] = [
        StructureKind::Iq,
        StructureKind::Lq,
        StructureKind::Sq,
        StructureKind::Rob,
        StructureKind::Btb,
        StructureKind::IntReg,
        StructureKind::FpReg,
        StructureKind::VecReg,
        StructureKind::Itlb,
        StructureKind::Dtlb,
        StructureKind::L1dWays,
        StructureKind::L2Ways,
        StructureKind::L1iWays,
    ];

    /// The structures the daemon re-partitions on load changes.
    pub const PIPELINE: [StructureKind; 8] = [
        StructureKind::Iq,
        StructureKind::Lq,
        StructureKind::Sq,
        StructureKind::Btb,
        StructureKind::Rob,
        StructureKind::IntReg,
        StructureKind::FpReg,
        StructureKind::VecReg,
    ];

    pub const COUNT: usize = Self::ALL.len();

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            StructureKind::Iq => "iq",
            StructureKind::Lq => "lq",
            StructureKind::Sq => "sq",
            StructureKind::Rob => "rob",
            StructureKind::Btb => "btb",
            StructureKind::IntReg => "int_reg",
            StructureKind::FpReg => "fp_reg",
            StructureKind::VecReg => "vec_reg",
            StructureKind::Itlb => "itlb",
            StructureKind::Dtlb => "dtlb",
            StructureKind::L1dWays => "l1d_ways",
            StructureKind::L2Ways => "l2_ways",
            StructureKind::L1iWays => "l1i_ways",
        }
    }

    pub fn from_name(name: &str) -> Option<StructureKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn capacity(self, config: &CoreConfig) -> u32 {
        match self {
            StructureKind::Iq => config.iq_entries,
            StructureKind::Lq => config.lq_entries,
            StructureKind::Sq => config.sq_entries,
            StructureKind::Rob => config.rob_entries,
            StructureKind::Btb => config.btb_entries,
            StructureKind::IntReg => config.int_regs,
            StructureKind::FpReg => config.fp_regs,
            StructureKind::VecReg => config.vec_regs,
            StructureKind::Itlb => config.itlb_entries,
            StructureKind::Dtlb => config.dtlb_entries,
            StructureKind::L1dWays => config.l1d.ways,
            StructureKind::L2Ways => config.l2.ways,
            StructureKind::L1iWays => config.l1i.ways,
        }
    }

    /// Whether the data-delivery op mix ever touches this structure.
    pub fn used_by_delivery(self) -> bool {
        !matches!(self, StructureKind::FpReg | StructureKind::VecReg)
    }
}

impl fmt::Display for StructureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Allocation {
    Granted,
    Stall,
}

/// One limit register and one usage register per hardware thread.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartitionedStructure {
    pub kind: StructureKind,
    pub capacity: u32,
    pub limit: [u32; 2],
    pub usage: [u32; 2],
}

impl PartitionedStructure {
    pub fn new(kind: StructureKind, capacity: u32, limit: [u32; 2]) -> Self {
        Self {
            kind,
            capacity,
            limit,
            usage: [0; 2],
        }
    }

    /// Grants `n` entries iff they fit under the thread's limit. A stall
    /// leaves the registers untouched.
    #[inline]
    pub fn try_allocate(&mut self, thread: ThreadId, n: u32) -> Allocation {
        let t = thread.index();
        if self.usage[t] + n <= self.limit[t] {
            self.usage[t] += n;
            Allocation::Granted
        } else {
            Allocation::Stall
        }
    }

    #[inline]
    pub fn has_room(&self, thread: ThreadId, n: u32) -> bool {
        let t = thread.index();
        self.usage[t] + n <= self.limit[t]
    }

    #[inline]
    pub fn release(&mut self, thread: ThreadId, n: u32) {
        let t = thread.index();
        debug_assert!(self.usage[t] >= n, "{} usage underflow", self.kind);
        self.usage[t] -= n;
    }

    pub fn is_safe(&self) -> bool {
        self.usage[0] <= self.limit[0]
            && self.usage[1] <= self.limit[1]
            && self.limit[0] + self.limit[1] <= self.capacity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeLabel {
    Baseline,
    HighIntensity,
    MediumIntensity,
    LowIntensity,
    Custom,
}

impl SchemeLabel {
    /// SDT share in percent for the named presets.
    pub fn sdt_percent(self) -> Option<u32> {
        match self {
            SchemeLabel::Baseline => Some(50),
            SchemeLabel::HighIntensity => Some(10),
            SchemeLabel::MediumIntensity => Some(20),
            SchemeLabel::LowIntensity => Some(40),
            SchemeLabel::Custom => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeLabel::Baseline => "baseline",
            SchemeLabel::HighIntensity => "high",
            SchemeLabel::MediumIntensity => "medium",
            SchemeLabel::LowIntensity => "low",
            SchemeLabel::Custom => "custom",
        }
    }

    pub fn from_name(s: &str) -> Option<SchemeLabel> {
        match s {
            "baseline" => Some(SchemeLabel::Baseline),
            "high" => Some(SchemeLabel::HighIntensity),
            "medium" => Some(SchemeLabel::MediumIntensity),
            "low" => Some(SchemeLabel::LowIntensity),
            _ => None,
        }
    }
}

impl fmt::Display for SchemeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartitionScheme {
    pub label: SchemeLabel,
    /// `limits[kind][thread]`.
    pub limits: [[u32; 2]; StructureKind::COUNT],
}

fn floor_pct(capacity: u32, pct: u32) -> u32 {
    (capacity as u64 * pct as u64 / 100) as u32
}

impl PartitionScheme {
    /// Named preset: SDT receives the floored percentage of every
    /// structure (at least one entry where the delivery path needs it),
    /// MAIN the remainder.
    pub fn preset(config: &CoreConfig, label: SchemeLabel) -> PartitionScheme {
        let pct = label
            .sdt_percent()
            .expect("preset_scheme is not defined for Custom");
        let mut s = Self::from_percentages(config, |_| pct);
        s.label = label;
        s
    }

    /// Custom scheme from a per-structure SDT percentage (0..=100).
    pub fn from_percentages(config: &CoreConfig, sdt_pct: impl Fn(StructureKind) -> u32) -> Self {
        let mut limits = [[0u32; 2]; StructureKind::COUNT];
        for kind in StructureKind::ALL {
            let cap = kind.capacity(config);
            let pct = sdt_pct(kind).min(100);
            let mut sdt = floor_pct(cap, pct);
            if sdt == 0 && pct > 0 && cap > 0 && kind.used_by_delivery() {
                sdt = 1;
            }
            limits[kind.index()] = [sdt, cap - sdt];
        }
        PartitionScheme {
            label: SchemeLabel::Custom,
            limits,
        }
    }

    /// Every structure owned entirely by one thread.
    pub fn dedicated(config: &CoreConfig, owner: ThreadId) -> Self {
        let mut limits = [[0u32; 2]; StructureKind::COUNT];
        for kind in StructureKind::ALL {
            limits[kind.index()][owner.index()] = kind.capacity(config);
        }
        PartitionScheme {
            label: SchemeLabel::Custom,
            limits,
        }
    }

    #[inline]
    pub fn limit(&self, kind: StructureKind, thread: ThreadId) -> u32 {
        self.limits[kind.index()][thread.index()]
    }

    pub fn set_limits(&mut self, kind: StructureKind, sdt: u32, main: u32) {
        self.limits[kind.index()] = [sdt, main];
        self.label = SchemeLabel::Custom;
    }

    /// SDT share of the summed capacity over `kinds`.
    pub fn sdt_share(&self, config: &CoreConfig, kinds: &[StructureKind]) -> f64 {
        let (mut sdt, mut cap) = (0u64, 0u64);
        for &k in kinds {
            sdt += self.limit(k, ThreadId::Sdt) as u64;
            cap += k.capacity(config) as u64;
        }
        if cap == 0 {
            0.0
        } else {
            sdt as f64 / cap as f64
        }
    }

    /// Reports every structure whose limits sum above its capacity.
    pub fn validate(&self, config: &CoreConfig) -> Result<(), Vec<Violation>> {
        let violations: Vec<Violation> = StructureKind::ALL
            .into_iter()
            .filter_map(|kind| {
                let [a, b] = self.limits[kind.index()];
                let capacity = kind.capacity(config);
                let sum = a as u64 + b as u64;
                (sum > capacity as u64).then_some(Violation {
                    kind,
                    sum,
                    capacity,
                })
            })
            .collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: StructureKind,
    pub sum: u64,
    pub capacity: u32,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: limits sum to {} > capacity {}",
            self.kind, self.sum, self.capacity
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepartitionMode {
    Flush,
    Drain,
}

impl RepartitionMode {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "flush" => Some(RepartitionMode::Flush),
            "drain" => Some(RepartitionMode::Drain),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RepartitionReceipt {
    pub applied_at: Cycle,
    pub mode: RepartitionMode,
    pub penalty: u64,
    pub old_label: SchemeLabel,
    pub new_label: SchemeLabel,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beefy() -> CoreConfig {
        CoreConfig::beefy()
    }

    #[test]
    fn rob_stalls_at_high_intensity_limit() {
        let cfg = beefy();
        let s = PartitionScheme::preset(&cfg, SchemeLabel::HighIntensity);
        let mut rob = PartitionedStructure::new(
            StructureKind::Rob,
            512,
            s.limits[StructureKind::Rob.index()],
        );
        assert_eq!(rob.limit, [51, 461]);
        for _ in 0..51 {
            assert_eq!(rob.try_allocate(ThreadId::Sdt, 1), Allocation::Granted);
        }
        let before = rob.clone();
        assert_eq!(rob.try_allocate(ThreadId::Sdt, 1), Allocation::Stall);
        assert_eq!(rob, before);
    }

    #[test]
    fn grant_on_empty_structure() {
        let mut s = PartitionedStructure::new(StructureKind::Rob, 512, [256, 256]);
        assert_eq!(s.try_allocate(ThreadId::Main, 4), Allocation::Granted);
        assert_eq!(s.usage[ThreadId::Main.index()], 4);
    }

    #[test]
    fn zero_limit_always_stalls() {
        let mut s = PartitionedStructure::new(StructureKind::FpReg, 0, [0, 0]);
        for _ in 0..1000 {
            assert_eq!(s.try_allocate(ThreadId::Sdt, 1), Allocation::Stall);
        }
    }

    #[test]
    fn preset_examples() {
        let cfg = beefy();
        let high = PartitionScheme::preset(&cfg, SchemeLabel::HighIntensity);
        assert_eq!(high.limits[StructureKind::Rob.index()], [51, 461]);
        let base = PartitionScheme::preset(&cfg, SchemeLabel::Baseline);
        assert_eq!(base.limits[StructureKind::Iq.index()], [97, 97]);
        let low = PartitionScheme::preset(&cfg, SchemeLabel::LowIntensity);
        assert_eq!(low.limits[StructureKind::IntReg.index()], [179, 269]);
    }

    #[test]
    fn baseline_remainder_goes_to_main() {
        let mut cfg = beefy();
        cfg.itlb_entries = 3;
        let base = PartitionScheme::preset(&cfg, SchemeLabel::Baseline);
        assert_eq!(base.limits[StructureKind::Itlb.index()], [1, 2]);
    }

    #[test]
    fn minimum_one_only_on_delivery_path() {
        let cfg = CoreConfig::minimalist();
        let high = PartitionScheme::preset(&cfg, SchemeLabel::HighIntensity);
        // floor(3 * 0.1) = 0, bumped to 1 for the delivery thread's ITLB.
        assert_eq!(high.limits[StructureKind::Itlb.index()], [1, 2]);
        assert_eq!(high.limits[StructureKind::FpReg.index()], [0, 0]);
        let mut cfg = beefy();
        cfg.vec_regs = 5;
        let high = PartitionScheme::preset(&cfg, SchemeLabel::HighIntensity);
        assert_eq!(high.limits[StructureKind::VecReg.index()], [0, 5]);
    }

    #[test]
    fn validate_examples() {
        let cfg = beefy();
        assert!(PartitionScheme::preset(&cfg, SchemeLabel::Baseline)
            .validate(&cfg)
            .is_ok());
        let mut s = PartitionScheme::preset(&cfg, SchemeLabel::Baseline);
        s.set_limits(StructureKind::Rob, 300, 300);
        let v = s.validate(&cfg).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, StructureKind::Rob);
        let mut s = PartitionScheme::preset(&cfg, SchemeLabel::Baseline);
        s.set_limits(StructureKind::FpReg, 0, 256);
        assert!(s.validate(&cfg).is_ok());
    }

    #[test]
    fn presets_always_validate() {
        for cfg in [CoreConfig::beefy(), CoreConfig::minimalist()] {
            for label in [
                SchemeLabel::Baseline,
                SchemeLabel::HighIntensity,
                SchemeLabel::MediumIntensity,
                SchemeLabel::LowIntensity,
            ] {
                PartitionScheme::preset(&cfg, label).validate(&cfg).unwrap();
            }
        }
    }
}
