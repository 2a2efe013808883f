//! Scenario files: TOML with `[core] [partition] [workload] [daemon] [sim]`
//! sections. Unknown keys are rejected with their location.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{CacheGeometry, CoreConfig, FuConfig, ThreadId};
use crate::daemon::DaemonConfig;
use crate::error::SimError;
use crate::partition::{PartitionScheme, RepartitionMode, SchemeLabel, StructureKind};
use crate::workload::{IntensityLabel, IntensityPreset, NetParams, Rate, Role};

pub const DEFAULT_DELIVERY_OPS: u32 = 150;
pub const FULL_WARMUP: u64 = 6_000_000;
pub const FULL_MEASURE: u64 = 12_000_000;
pub const FAST_WARMUP: u64 = 300_000;
pub const FAST_MEASURE: u64 = 1_200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Delivery thread alone on a core with every structure.
    DedicatedDeliveryCore,
    /// Delivery on SDT and processing on MAIN of the same core.
    ColocatedSmt,
    /// Delivery and processing each on their own dedicated core, sharing
    /// the LLC.
    SplitCore,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::DedicatedDeliveryCore => "dedicated_delivery_core",
            Topology::ColocatedSmt => "colocated_smt",
            Topology::SplitCore => "split_core",
        }
    }

    /// Per-core thread roles for `groups` replicas.
    pub fn placement(self, groups: usize) -> Vec<[Role; 2]> {
        let mut v = Vec::new();
        for q in 0..groups {
            match self {
                Topology::DedicatedDeliveryCore => {
                    v.push([Role::Delivery { queue: q }, Role::Idle])
                }
                Topology::ColocatedSmt => {
                    v.push([Role::Delivery { queue: q }, Role::Processing { queue: q }])
                }
                Topology::SplitCore => {
                    v.push([Role::Delivery { queue: q }, Role::Idle]);
                    v.push([Role::Idle, Role::Processing { queue: q }]);
                }
            }
        }
        v
    }
}

/// How the initial partition is chosen.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PartitionSpec {
    Preset(SchemeLabel),
    /// Every structure to the core's single active thread.
    Dedicated,
    Custom(BTreeMap<StructureKind, [u32; 2]>),
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub config: CoreConfig,
    pub partition: PartitionSpec,
    pub net: NetParams,
    pub topology: Topology,
    /// Replicas of the topology, each with its own NIC queue.
    pub groups: usize,
    pub daemon: Option<DaemonConfig>,
    pub warmup_cycles: u64,
    pub measure_cycles: u64,
    pub seed: u64,
    pub llc_ports: Option<u32>,
}

impl Scenario {
    pub fn new(config: CoreConfig, topology: Topology, rate: Rate) -> Self {
        Scenario {
            net: NetParams {
                rate,
                pkt_bytes: 64,
                ring_slots: 1024,
                payload_ring_slots: 512,
                delivery_ops_per_packet: DEFAULT_DELIVERY_OPS,
                intensity: IntensityPreset::of(IntensityLabel::Medium),
                clock_ghz: config.clock_ghz,
                seed: 1,
            },
            config,
            partition: match topology {
                Topology::ColocatedSmt => PartitionSpec::Preset(SchemeLabel::Baseline),
                _ => PartitionSpec::Dedicated,
            },
            topology,
            groups: 1,
            daemon: None,
            warmup_cycles: FULL_WARMUP,
            measure_cycles: FULL_MEASURE,
            seed: 1,
            llc_ports: Some(2),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.net.seed = seed;
        self
    }

    /// Short profile. The daemon period shrinks with the measured window so
    /// the same number of periods fit.
    pub fn fast(mut self) -> Self {
        if let Some(d) = &mut self.daemon {
            d.period_ms *= FAST_MEASURE as f64 / FULL_MEASURE as f64;
        }
        self.warmup_cycles = FAST_WARMUP;
        self.measure_cycles = FAST_MEASURE;
        self
    }

    pub fn n_cores(&self) -> usize {
        self.topology.placement(self.groups).len()
    }

    /// Partition scheme for a core whose roles are `roles`.
    pub fn scheme_for(&self, roles: [Role; 2]) -> Result<PartitionScheme, SimError> {
        let cfg = &self.config;
        let scheme = match &self.partition {
            PartitionSpec::Preset(l) => PartitionScheme::preset(cfg, *l),
            PartitionSpec::Dedicated => match roles {
                [Role::Idle, Role::Idle] => PartitionScheme::preset(cfg, SchemeLabel::Baseline),
                [Role::Idle, _] => PartitionScheme::dedicated(cfg, ThreadId::Main),
                [_, Role::Idle] => PartitionScheme::dedicated(cfg, ThreadId::Sdt),
                _ => PartitionScheme::preset(cfg, SchemeLabel::Baseline),
            },
            PartitionSpec::Custom(limits) => {
                let mut s = PartitionScheme::preset(cfg, SchemeLabel::Baseline);
                s.label = SchemeLabel::Custom;
                for (&k, &[a, b]) in limits {
                    s.set_limits(k, a, b);
                }
                s
            }
        };
        // Split-core and dedicated cores keep whole cores per thread even
        // under a preset.
        let scheme = match (self.topology, &self.partition) {
            (Topology::ColocatedSmt, _) | (_, PartitionSpec::Custom(_)) => scheme,
            _ => match roles {
                [Role::Idle, _] => PartitionScheme::dedicated(cfg, ThreadId::Main),
                _ => PartitionScheme::dedicated(cfg, ThreadId::Sdt),
            },
        };
        scheme.validate(cfg).map_err(SimError::InvalidScheme)?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.config.validate()?;
        self.net.validate()?;
        if self.measure_cycles == 0 {
            return Err(SimError::config("measure_cycles must be > 0"));
        }
        if self.groups == 0 {
            return Err(SimError::config("cores must be >= 1"));
        }
        if let Some(d) = &self.daemon {
            d.validate()?;
            if self.topology != Topology::ColocatedSmt {
                return Err(SimError::config(
                    "the daemon requires the colocated_smt topology",
                ));
            }
        }
        for roles in self.topology.placement(1) {
            self.scheme_for(roles)?;
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let before = &text[..span.start.min(text.len())];
                    let line = before.matches('\n').count() + 1;
                    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    format!("line {line}, column {col}")
                }
                None => "scenario".to_string(),
            };
            SimError::scenario(location, e.message().to_string())
        })?;
        file.resolve()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    core: CoreSection,
    #[serde(default)]
    partition: PartitionSection,
    #[serde(default)]
    workload: WorkloadSection,
    #[serde(default)]
    daemon: DaemonSection,
    #[serde(default)]
    sim: SimSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoreSection {
    base: Option<String>,
    superscalar_width: Option<u32>,
    iq_entries: Option<u32>,
    lq_entries: Option<u32>,
    sq_entries: Option<u32>,
    rob_entries: Option<u32>,
    int_regs: Option<u32>,
    fp_regs: Option<u32>,
    vec_regs: Option<u32>,
    itlb_entries: Option<u32>,
    dtlb_entries: Option<u32>,
    btb_entries: Option<u32>,
    l1i_kb: Option<u64>,
    l1i_ways: Option<u32>,
    l1d_kb: Option<u64>,
    l1d_ways: Option<u32>,
    l2_kb: Option<u64>,
    l2_ways: Option<u32>,
    l3_kb: Option<u64>,
    l3_ways: Option<u32>,
    int_units: Option<u32>,
    fp_units: Option<u32>,
    vec_units: Option<u32>,
    load_ports: Option<u32>,
    store_ports: Option<u32>,
    clock_ghz: Option<f64>,
    llc_ports: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionSection {
    preset: Option<String>,
    limits: Option<BTreeMap<String, [u32; 2]>>,
    /// SDT percentage per structure; MAIN gets the rest.
    percent: Option<BTreeMap<String, u32>>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RateField {
    Gbps(f64),
    Word(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    rate_gbps: Option<RateField>,
    pkt_bytes: Option<u32>,
    intensity: Option<String>,
    cycles_per_byte: Option<f64>,
    ring_slots: Option<u32>,
    payload_ring_slots: Option<u32>,
    delivery_ops_per_packet: Option<u32>,
    topology: Option<String>,
    cores: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DaemonSection {
    enabled: Option<bool>,
    period_ms: Option<f64>,
    /// (low_floor, high_ceiling) in Gbps.
    thresholds: Option<[f64; 2]>,
    ewma_alpha: Option<f64>,
    hysteresis_margin: Option<f64>,
    mode: Option<String>,
    max_load_gbps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    warmup_cycles: Option<u64>,
    measure_cycles: Option<u64>,
    seed: Option<u64>,
    profile: Option<String>,
}

fn bad(section: &str, key: &str, msg: impl std::fmt::Display) -> SimError {
    SimError::scenario(format!("[{section}] {key}"), msg.to_string())
}

fn cache(kb: Option<u64>, ways: Option<u32>, base: CacheGeometry) -> CacheGeometry {
    CacheGeometry::new(
        kb.map_or(base.bytes, |k| k << 10),
        ways.unwrap_or(base.ways),
    )
}

impl ScenarioFile {
    fn resolve(self) -> Result<Scenario, SimError> {
        let c = &self.core;
        let mut config = match c.base.as_deref() {
            None | Some("beefy") => CoreConfig::beefy(),
            Some("minimalist") => CoreConfig::minimalist(),
            Some(other) => {
                return Err(bad(
                    "core",
                    "base",
                    format!("unknown base config {other:?}"),
                ))
            }
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = c.$f { config.$f = v; } )* };
        }
        set!(
            superscalar_width,
            iq_entries,
            lq_entries,
            sq_entries,
            rob_entries,
            int_regs,
            fp_regs,
            vec_regs
        );
        set!(itlb_entries, dtlb_entries, btb_entries, clock_ghz);
        config.l1i = cache(c.l1i_kb, c.l1i_ways, config.l1i);
        config.l1d = cache(c.l1d_kb, c.l1d_ways, config.l1d);
        config.l2 = cache(c.l2_kb, c.l2_ways, config.l2);
        config.l3_slice = cache(c.l3_kb, c.l3_ways, config.l3_slice);
        if c.superscalar_width.is_some() {
            config.fu = FuConfig::scaled_for(config.superscalar_width);
        }
        macro_rules! set_fu {
            ($($f:ident),*) => { $( if let Some(v) = c.$f { config.fu.$f = v; } )* };
        }
        set_fu!(int_units, fp_units, vec_units, load_ports, store_ports);

        let w = &self.workload;
        let topology = match w.topology.as_deref() {
            None | Some("colocated_smt") => Topology::ColocatedSmt,
            Some("split_core") => Topology::SplitCore,
            Some("dedicated_delivery_core") => Topology::DedicatedDeliveryCore,
            Some(other) => {
                return Err(bad(
                    "workload",
                    "topology",
                    format!("unknown topology {other:?}"),
                ))
            }
        };
        let rate = match &w.rate_gbps {
            None => Rate::Gbps(0.0),
            Some(RateField::Gbps(g)) => Rate::Gbps(*g),
            Some(RateField::Word(s)) if s == "max" => Rate::Max,
            Some(RateField::Word(s)) => {
                return Err(bad(
                    "workload",
                    "rate_gbps",
                    format!("expected a number or \"max\", got {s:?}"),
                ))
            }
        };
        let mut s = Scenario::new(config, topology, rate);
        if let Some(v) = w.pkt_bytes {
            s.net.pkt_bytes = v;
        }
        if let Some(name) = &w.intensity {
            let l = IntensityLabel::from_name(name).ok_or_else(|| {
                bad(
                    "workload",
                    "intensity",
                    format!("unknown intensity {name:?}"),
                )
            })?;
            s.net.intensity = IntensityPreset::of(l);
        }
        if let Some(v) = w.cycles_per_byte {
            s.net.intensity.cycles_per_byte = v;
        }
        if let Some(v) = w.ring_slots {
            s.net.ring_slots = v;
        }
        if let Some(v) = w.payload_ring_slots {
            s.net.payload_ring_slots = v;
        }
        if let Some(v) = w.delivery_ops_per_packet {
            s.net.delivery_ops_per_packet = v;
        }
        if let Some(v) = w.cores {
            s.groups = v;
        }
        s.llc_ports = match c.llc_ports {
            Some(0) => None,
            Some(p) => Some(p),
            None => Some(2),
        };

        if let Some(name) = &self.partition.preset {
            s.partition = match name.as_str() {
                "dedicated" => PartitionSpec::Dedicated,
                _ => PartitionSpec::Preset(
                    SchemeLabel::from_name(name)
                        .filter(|l| *l != SchemeLabel::Custom)
                        .ok_or_else(|| {
                            bad("partition", "preset", format!("unknown preset {name:?}"))
                        })?,
                ),
            };
        }
        if let Some(limits) = &self.partition.limits {
            let mut m = BTreeMap::new();
            for (k, v) in limits {
                let kind = StructureKind::from_name(k)
                    .ok_or_else(|| bad("partition.limits", k, "unknown structure"))?;
                m.insert(kind, *v);
            }
            s.partition = PartitionSpec::Custom(m);
        }
        if let Some(pcts) = &self.partition.percent {
            if self.partition.limits.is_some() {
                return Err(bad(
                    "partition",
                    "percent",
                    "give either limits or percent, not both",
                ));
            }
            let mut want = BTreeMap::new();
            for (k, &v) in pcts {
                let kind = StructureKind::from_name(k)
                    .ok_or_else(|| bad("partition.percent", k, "unknown structure"))?;
                if v > 100 {
                    return Err(bad(
                        "partition.percent",
                        k,
                        format!("expected 0..=100, got {v}"),
                    ));
                }
                want.insert(kind, v);
            }
            let scheme = PartitionScheme::from_percentages(&s.config, |k| {
                want.get(&k).copied().unwrap_or(50)
            });
            let m = StructureKind::ALL
                .iter()
                .map(|&k| {
                    (
                        k,
                        [
                            scheme.limit(k, ThreadId::Sdt),
                            scheme.limit(k, ThreadId::Main),
                        ],
                    )
                })
                .collect();
            s.partition = PartitionSpec::Custom(m);
        }

        let d = &self.daemon;
        if d.enabled.unwrap_or(false) {
            let mut dc = DaemonConfig::default();
            if let Some(v) = d.period_ms {
                dc.period_ms = v;
            }
            if let Some([lo, hi]) = d.thresholds {
                dc.low_floor_gbps = lo;
                dc.high_ceiling_gbps = hi;
            }
            if let Some(v) = d.ewma_alpha {
                dc.ewma_alpha = v;
            }
            if let Some(v) = d.hysteresis_margin {
                dc.hysteresis_margin_gbps = v;
            }
            if let Some(v) = d.max_load_gbps {
                dc.max_load_gbps = v;
            }
            if let Some(m) = &d.mode {
                dc.mode = RepartitionMode::from_name(m).ok_or_else(|| {
                    bad(
                        "daemon",
                        "mode",
                        format!("expected \"flush\" or \"drain\", got {m:?}"),
                    )
                })?;
            }
            s.daemon = Some(dc);
        }

        let sim = &self.sim;
        match sim.profile.as_deref() {
            None | Some("full") => {}
            Some("fast") => {
                s = s.fast();
                if let (Some(dc), Some(v)) = (&mut s.daemon, d.period_ms) {
                    dc.period_ms = v;
                }
            }
            Some(other) => {
                return Err(bad(
                    "sim",
                    "profile",
                    format!("expected \"fast\" or \"full\", got {other:?}"),
                ))
            }
        }
        if let Some(v) = sim.warmup_cycles {
            s.warmup_cycles = v;
        }
        if let Some(v) = sim.measure_cycles {
            s.measure_cycles = v;
        }
        if let Some(v) = sim.seed {
            s = s.with_seed(v);
        }
        s.net.clock_ghz = s.config.clock_ghz;
        s.validate()?;
        Ok(s)
    }
}
