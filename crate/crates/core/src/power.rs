//! Analytic area and power model for cores and chip multiprocessors.
//!
//! Area: queues and register files grow as entries^1.1, caches linearly in
//! bytes, BTB/TLB linearly in entries, rename/bypass as width². Power is
//! static (proportional to area) plus dynamic (per-access energy times
//! access rate). Coefficients live in `data/power_coefficients.toml`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::CoreConfig;
use crate::error::SimError;
use crate::partition::StructureKind;

const DEFAULT_TABLE: &str = include_str!("../data/power_coefficients.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Rob,
    Iq,
    Lq,
    Sq,
    IntReg,
    FpReg,
    VecReg,
    L1i,
    L1d,
    L2,
    L3,
    Btb,
    Itlb,
    Dtlb,
    RenameBypass,
    IntFu,
    FpFu,
    VecFu,
    LoadPort,
    StorePort,
    Frontend,
    CoreFixed,
    SdtThreadState,
    SdtLimitPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scaling {
    Superlinear,
    PerKb,
    Linear,
    Square,
}

impl CostKind {
    pub const ALL: [CostKind; 24] = [
        CostKind::Rob,
        CostKind::Iq,
        CostKind::Lq,
        CostKind::Sq,
        CostKind::IntReg,
        CostKind::FpReg,
        CostKind::VecReg,
        CostKind::L1i,
        CostKind::L1d,
        CostKind::L2,
        CostKind::L3,
        CostKind::Btb,
        CostKind::Itlb,
        CostKind::Dtlb,
        CostKind::RenameBypass,
        CostKind::IntFu,
        CostKind::FpFu,
        CostKind::VecFu,
        CostKind::LoadPort,
        CostKind::StorePort,
        CostKind::Frontend,
        CostKind::CoreFixed,
        CostKind::SdtThreadState,
        CostKind::SdtLimitPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Rob => "rob",
            CostKind::Iq => "iq",
            CostKind::Lq => "lq",
            CostKind::Sq => "sq",
            CostKind::IntReg => "int_reg",
            CostKind::FpReg => "fp_reg",
            CostKind::VecReg => "vec_reg",
            CostKind::L1i => "l1i",
            CostKind::L1d => "l1d",
            CostKind::L2 => "l2",
            CostKind::L3 => "l3",
            CostKind::Btb => "btb",
            CostKind::Itlb => "itlb",
            CostKind::Dtlb => "dtlb",
            CostKind::RenameBypass => "rename_bypass",
            CostKind::IntFu => "int_fu",
            CostKind::FpFu => "fp_fu",
            CostKind::VecFu => "vec_fu",
            CostKind::LoadPort => "load_port",
            CostKind::StorePort => "store_port",
            CostKind::Frontend => "frontend",
            CostKind::CoreFixed => "core_fixed",
            CostKind::SdtThreadState => "sdt_thread_state",
            CostKind::SdtLimitPair => "sdt_limit_pair",
        }
    }

    fn scaling(self) -> Scaling {
        use CostKind::*;
        match self {
            Rob | Iq | Lq | Sq | IntReg | FpReg | VecReg => Scaling::Superlinear,
            L1i | L1d | L2 | L3 => Scaling::PerKb,
            RenameBypass => Scaling::Square,
            _ => Scaling::Linear,
        }
    }
}

/// Coefficient table.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub queue_exponent: f64,
    pub area: BTreeMap<CostKind, f64>,
    pub energy: BTreeMap<CostKind, f64>,
    pub dram_energy: f64,
    pub static_per_area: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    queue_exponent: f64,
    area: BTreeMap<String, f64>,
    energy: BTreeMap<String, f64>,
    #[serde(rename = "static")]
    static_: BTreeMap<String, f64>,
}

impl Coefficients {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let raw: RawTable = toml::from_str(text)
            .map_err(|e| SimError::config(format!("coefficient table: {e}")))?;
        let pick = |m: &BTreeMap<String, f64>,
                    section: &str|
         -> Result<BTreeMap<CostKind, f64>, SimError> {
            let mut out = BTreeMap::new();
            for k in CostKind::ALL {
                let v = *m.get(k.name()).ok_or_else(|| {
                    SimError::config(format!("coefficient table: missing {section}.{}", k.name()))
                })?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(SimError::config(format!(
                        "coefficient {section}.{} must be >= 0",
                        k.name()
                    )));
                }
                out.insert(k, v);
            }
            Ok(out)
        };
        let dram_energy = *raw
            .energy
            .get("dram")
            .ok_or_else(|| SimError::config("coefficient table: missing energy.dram"))?;
        let static_per_area = *raw
            .static_
            .get("per_area")
            .ok_or_else(|| SimError::config("coefficient table: missing static.per_area"))?;
        Ok(Coefficients {
            queue_exponent: raw.queue_exponent,
            area: pick(&raw.area, "area")?,
            energy: pick(&raw.energy, "energy")?,
            dram_energy,
            static_per_area,
        })
    }

    /// The table shipped with the crate.
    pub fn shipped() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped coefficient table parses")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StructureCost {
    pub kind: CostKind,
    pub size: f64,
    pub area_units: f64,
    /// W.
    pub static_power_units: f64,
    /// pJ.
    pub dynamic_energy_per_access: f64,
}

/// Cost of one structure of the given size. Size is entries for queues,
/// register files, BTB and TLBs; bytes for caches; width for rename/bypass
/// and the frontend; a count for functional units and SDT state.
pub fn structure_cost(
    coef: &Coefficients,
    kind: CostKind,
    size: f64,
) -> Result<StructureCost, SimError> {
    if !(size >= 0.0 && size.is_finite()) {
        return Err(SimError::config(format!(
            "structure size for {} must be >= 0, got {size}",
            kind.name()
        )));
    }
    let a = coef.area[&kind];
    let area = match kind.scaling() {
        Scaling::Superlinear => a * size.powf(coef.queue_exponent),
        Scaling::PerKb => a * size / 1024.0,
        Scaling::Linear => a * size,
        Scaling::Square => a * size * size,
    };
    Ok(StructureCost {
        kind,
        size,
        area_units: area,
        static_power_units: coef.static_per_area * area,
        dynamic_energy_per_access: coef.energy[&kind] * area.sqrt(),
    })
}

/// Accesses per cycle by structure, averaged over a simulated window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub rates: BTreeMap<CostKind, f64>,
    pub dram_rate: f64,
}

impl Activity {
    pub fn rate(&self, kind: CostKind) -> f64 {
        self.rates.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn add(&mut self, kind: CostKind, per_cycle: f64) {
        *self.rates.entry(kind).or_insert(0.0) += per_cycle;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoreCost {
    pub structures: Vec<StructureCost>,
    pub area_units: f64,
    pub static_power: f64,
    pub dynamic_power: f64,
}

impl CoreCost {
    pub fn power_units(&self) -> f64 {
        self.static_power + self.dynamic_power
    }

    pub fn area_of(&self, kind: CostKind) -> f64 {
        self.structures
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.area_units)
            .sum()
    }
}

/// Sizes of every costed structure in `config`.
pub fn core_sizes(config: &CoreConfig, sdt_enabled: bool) -> Vec<(CostKind, f64)> {
    use CostKind::*;
    let mut v = vec![
        (Rob, config.rob_entries as f64),
        (Iq, config.iq_entries as f64),
        (Lq, config.lq_entries as f64),
        (Sq, config.sq_entries as f64),
        (IntReg, config.int_regs as f64),
        (FpReg, config.fp_regs as f64),
        (VecReg, config.vec_regs as f64),
        (L1i, config.l1i.bytes as f64),
        (L1d, config.l1d.bytes as f64),
        (L2, config.l2.bytes as f64),
        (L3, config.l3_slice.bytes as f64),
        (Btb, config.btb_entries as f64),
        (Itlb, config.itlb_entries as f64),
        (Dtlb, config.dtlb_entries as f64),
        (RenameBypass, config.superscalar_width as f64),
        (IntFu, config.fu.int_units as f64),
        (FpFu, config.fu.fp_units as f64),
        (VecFu, config.fu.vec_units as f64),
        (LoadPort, config.fu.load_ports as f64),
        (StorePort, config.fu.store_ports as f64),
        (Frontend, config.superscalar_width as f64),
        (CoreFixed, 1.0),
    ];
    if sdt_enabled {
        v.push((SdtThreadState, 1.0));
        v.push((SdtLimitPair, StructureKind::COUNT as f64));
    }
    v
}

/// Area and power of one core at the given activity. `clock_ghz` converts
/// per-cycle rates to per-second.
pub fn core_cost(
    coef: &Coefficients,
    config: &CoreConfig,
    sdt_enabled: bool,
    activity: Option<&Activity>,
) -> Result<CoreCost, SimError> {
    let mut structures = Vec::new();
    let mut area = 0.0;
    let mut stat = 0.0;
    let mut dynamic = 0.0;
    for (kind, size) in core_sizes(config, sdt_enabled) {
        let s = structure_cost(coef, kind, size)?;
        area += s.area_units;
        stat += s.static_power_units;
        if let Some(a) = activity {
            // pJ × accesses/ns = mW.
            dynamic += a.rate(kind) * config.clock_ghz * s.dynamic_energy_per_access * 1e-3;
        }
        structures.push(s);
    }
    if let Some(a) = activity {
        dynamic += a.dram_rate * config.clock_ghz * coef.dram_energy * 1e-3;
    }
    Ok(CoreCost {
        structures,
        area_units: area,
        static_power: stat,
        dynamic_power: dynamic,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CmpCost {
    pub n_cores: usize,
    pub per_core: Vec<CoreCost>,
    pub area_units: f64,
    pub power_units: f64,
}

impl CmpCost {
    pub fn from_cores(per_core: Vec<CoreCost>) -> Self {
        let area_units = per_core.iter().map(|c| c.area_units).sum();
        let power_units = per_core.iter().map(|c| c.power_units()).sum();
        CmpCost {
            n_cores: per_core.len(),
            per_core,
            area_units,
            power_units,
        }
    }
}

/// `n_cores` identical cores at the same activity.
pub fn cmp_cost(
    coef: &Coefficients,
    n_cores: usize,
    config: &CoreConfig,
    sdt_enabled: bool,
    activity: Option<&Activity>,
) -> Result<CmpCost, SimError> {
    if n_cores == 0 {
        return Err(SimError::config("n_cores must be >= 1"));
    }
    let core = core_cost(coef, config, sdt_enabled, activity)?;
    Ok(CmpCost::from_cores(vec![core; n_cores]))
}

/// Percent savings of `variant` relative to `baseline` in (area, power).
pub fn savings(baseline: &CmpCost, variant: &CmpCost) -> Result<(f64, f64), SimError> {
    if !(baseline.area_units > 0.0 && baseline.power_units > 0.0) {
        return Err(SimError::config("baseline totals must be > 0"));
    }
    Ok((
        (baseline.area_units - variant.area_units) / baseline.area_units * 100.0,
        (baseline.power_units - variant.power_units) / baseline.power_units * 100.0,
    ))
}

/// SDT increment as a fraction of a core's area.
pub fn sdt_area_overhead(coef: &Coefficients, config: &CoreConfig) -> Result<f64, SimError> {
    let off = core_cost(coef, config, false, None)?.area_units;
    let on = core_cost(coef, config, true, None)?.area_units;
    Ok((on - off) / off)
}
