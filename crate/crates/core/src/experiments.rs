//! Experiment orchestration: single runs, sensitivity sweeps, scaling,
//! the intensity study and the CMP cost comparison.

use std::io::Write;

use serde::Serialize;

use crate::cache::Uncore;
use crate::config::{CacheGeometry, CoreConfig, FuConfig, ThreadId};
use crate::daemon::{daemon_tick, DaemonConfig, DaemonState};
use crate::error::SimError;
use crate::metrics::{build_report, MetricsReport, ReportInputs};
use crate::partition::{PartitionScheme, SchemeLabel, StructureKind};
use crate::pipeline::{Core, Machine};
use crate::power::{self, CmpCost, Coefficients, CoreCost};
use crate::scenario::{PartitionSpec, Scenario, Topology};
use crate::workload::{IntensityLabel, IntensityPreset, NetWorkload, Rate, Role};

/// Instantiates the cores, LLC and workload of a scenario.
pub fn build_machine(s: &Scenario) -> Result<Machine<NetWorkload>, SimError> {
    s.validate()?;
    let placement = s.topology.placement(s.groups);
    let mut cores = Vec::with_capacity(placement.len());
    for (i, roles) in placement.iter().enumerate() {
        let scheme = if s.daemon.is_some() {
            PartitionScheme::preset(&s.config, SchemeLabel::Baseline)
        } else {
            s.scheme_for(*roles)?
        };
        cores.push(Core::new(i, s.config.clone(), scheme)?);
    }
    let mut uncore = Uncore::for_core(&s.config, placement.len() as u64);
    uncore.llc_ports = s.llc_ports.map(|p| p * placement.len() as u32);
    let workload = NetWorkload::new(s.net.clone(), &placement)?;
    Ok(Machine::new(cores, uncore, workload))
}

fn delivery_queue(m: &Machine<NetWorkload>, core: usize) -> Option<usize> {
    match m.workload.role(core, ThreadId::Sdt) {
        Role::Delivery { queue } => Some(queue),
        _ => None,
    }
}

#[derive(Default)]
pub struct RunOptions {
    pub trace: Option<Box<dyn Write>>,
}

pub fn run(s: &Scenario) -> Result<MetricsReport, SimError> {
    run_with(s, RunOptions::default())
}

/// Functional warm-up, then the measured window with the daemon (if any)
/// ticking once per period on every core.
pub fn run_with(s: &Scenario, opts: RunOptions) -> Result<MetricsReport, SimError> {
    let mut m = build_machine(s)?;
    for _ in 0..s.warmup_cycles {
        m.functional_step()?;
    }
    m.reset_stats();
    m.workload.reset_measurement();
    if let Some(out) = opts.trace {
        m.set_trace(out)?;
    }
    let start = m.now();
    let end = start + s.measure_cycles;
    let mut receipts = Vec::new();
    match &s.daemon {
        None => m.run_for(s.measure_cycles)?,
        Some(cfg) => {
            let period = cfg.period_cycles(s.config.clock_ghz);
            let n = m.cores.len();
            let mut states: Vec<(usize, usize, DaemonState)> = (0..n)
                .filter_map(|c| {
                    delivery_queue(&m, c).map(|q| {
                        let bytes = m.workload.counters(q).delivered_bytes;
                        (c, q, DaemonState::new(m.cores[c].label(), start, bytes))
                    })
                })
                .collect();
            let mut next_tick = start + period;
            while m.now() < end {
                m.step()?;
                if m.now() >= next_tick && m.now() < end {
                    next_tick += period;
                    for (c, q, st) in states.iter_mut() {
                        let bytes = m.workload.counters(*q).delivered_bytes;
                        if let Some(r) = daemon_tick(st, cfg, &mut m, *c, bytes)? {
                            receipts.push((*c, r));
                        }
                    }
                }
            }
        }
    }
    let measured = m.now() - start;
    Ok(build_report(ReportInputs {
        topology: s.topology.name(),
        seed: s.seed,
        measure_cycles: measured,
        cores: &m.cores,
        uncore: &m.uncore,
        workload: &m.workload,
        receipts,
    }))
}

/// Structure varied by a sensitivity sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Rob,
    Iq,
    Lq,
    Sq,
    IntRegs,
    FpRegs,
    VecRegs,
    Itlb,
    Dtlb,
    Btb,
    /// Sizes in KB.
    L1i,
    L1d,
    L2,
    L3,
    Width,
    IntUnits,
    FpUnits,
}

impl SweepKind {
    pub const ALL: [SweepKind; 17] = [
        SweepKind::Rob,
        SweepKind::Iq,
        SweepKind::Lq,
        SweepKind::Sq,
        SweepKind::IntRegs,
        SweepKind::FpRegs,
        SweepKind::VecRegs,
        SweepKind::Itlb,
        SweepKind::Dtlb,
        SweepKind::Btb,
        SweepKind::L1i,
        SweepKind::L1d,
        SweepKind::L2,
        SweepKind::L3,
        SweepKind::Width,
        SweepKind::IntUnits,
        SweepKind::FpUnits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Rob => "rob",
            SweepKind::Iq => "iq",
            SweepKind::Lq => "lq",
            SweepKind::Sq => "sq",
            SweepKind::IntRegs => "int_regs",
            SweepKind::FpRegs => "fp_regs",
            SweepKind::VecRegs => "vec_regs",
            SweepKind::Itlb => "itlb",
            SweepKind::Dtlb => "dtlb",
            SweepKind::Btb => "btb",
            SweepKind::L1i => "l1i",
            SweepKind::L1d => "l1d",
            SweepKind::L2 => "l2",
            SweepKind::L3 => "l3",
            SweepKind::Width => "width",
            SweepKind::IntUnits => "int_units",
            SweepKind::FpUnits => "fp_units",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Value of this structure in `config`, in sweep units.
    pub fn get(self, c: &CoreConfig) -> u64 {
        match self {
            SweepKind::Rob => c.rob_entries as u64,
            SweepKind::Iq => c.iq_entries as u64,
            SweepKind::Lq => c.lq_entries as u64,
            SweepKind::Sq => c.sq_entries as u64,
            SweepKind::IntRegs => c.int_regs as u64,
            SweepKind::FpRegs => c.fp_regs as u64,
            SweepKind::VecRegs => c.vec_regs as u64,
            SweepKind::Itlb => c.itlb_entries as u64,
            SweepKind::Dtlb => c.dtlb_entries as u64,
            SweepKind::Btb => c.btb_entries as u64,
            SweepKind::L1i => c.l1i.bytes >> 10,
            SweepKind::L1d => c.l1d.bytes >> 10,
            SweepKind::L2 => c.l2.bytes >> 10,
            SweepKind::L3 => c.l3_slice.bytes >> 10,
            SweepKind::Width => c.superscalar_width as u64,
            SweepKind::IntUnits => c.fu.int_units as u64,
            SweepKind::FpUnits => c.fu.fp_units as u64,
        }
    }

    /// `config` with this structure set to `size`. Cache ways are kept
    /// unless the new size has fewer lines than ways.
    pub fn apply(self, c: &CoreConfig, size: u64) -> CoreConfig {
        let mut c = c.clone();
        let v = size as u32;
        let geom = |g: CacheGeometry| {
            let bytes = size << 10;
            let lines = (bytes / 64).max(1) as u32;
            CacheGeometry::new(bytes, g.ways.min(lines))
        };
        match self {
            SweepKind::Rob => c.rob_entries = v,
            SweepKind::Iq => c.iq_entries = v,
            SweepKind::Lq => c.lq_entries = v,
            SweepKind::Sq => c.sq_entries = v,
            SweepKind::IntRegs => c.int_regs = v,
            SweepKind::FpRegs => c.fp_regs = v,
            SweepKind::VecRegs => c.vec_regs = v,
            SweepKind::Itlb => c.itlb_entries = v,
            SweepKind::Dtlb => c.dtlb_entries = v,
            SweepKind::Btb => c.btb_entries = v,
            SweepKind::L1i => c.l1i = geom(c.l1i),
            SweepKind::L1d => c.l1d = geom(c.l1d),
            SweepKind::L2 => c.l2 = geom(c.l2),
            SweepKind::L3 => c.l3_slice = geom(c.l3_slice),
            SweepKind::Width => {
                c.superscalar_width = v;
                c.fu = FuConfig::scaled_for(v);
            }
            SweepKind::IntUnits => c.fu.int_units = v,
            SweepKind::FpUnits => c.fu.fp_units = v,
        }
        c
    }

    /// Size at which the minimalist configuration sits.
    pub fn minimalist_size(self) -> u64 {
        self.get(&CoreConfig::minimalist())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub structure: &'static str,
    pub size: u64,
    pub throughput_gbps: f64,
    pub throughput_pps: f64,
    pub p99_latency_cycles: u64,
    pub ratio_to_max: f64,
    pub above_90pct: bool,
}

/// One run per size with everything else fixed.
pub fn sweep(base: &Scenario, kind: SweepKind, sizes: &[u64]) -> Result<Vec<SweepRow>, SimError> {
    if sizes.is_empty() {
        return Err(SimError::config("sweep needs at least one size"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut s = base.clone();
        s.config = kind.apply(&base.config, size);
        let r = run(&s)?;
        rows.push(SweepRow {
            structure: kind.name(),
            size,
            throughput_gbps: r.throughput_gbps,
            throughput_pps: r.throughput_pps,
            p99_latency_cycles: r.p99_latency_cycles,
            ratio_to_max: 0.0,
            above_90pct: false,
        });
    }
    let max = rows.iter().map(|r| r.throughput_gbps).fold(0.0, f64::max);
    for r in rows.iter_mut() {
        r.ratio_to_max = if max > 0.0 {
            r.throughput_gbps / max
        } else {
            1.0
        };
        r.above_90pct = r.ratio_to_max >= 0.9;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRow {
    pub cores: usize,
    pub aggregate_gbps: f64,
    pub aggregate_pps: f64,
    /// Aggregate over N × the single-core figure.
    pub ratio_to_linear: f64,
}

/// N independent delivery cores, one NIC queue each, sharing the LLC.
pub fn scale(base: &Scenario, counts: &[usize]) -> Result<Vec<ScaleRow>, SimError> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(SimError::config("core counts must be >= 1"));
    }
    let mut one = base.clone();
    one.groups = 1;
    let single = run(&one)?.throughput_gbps;
    counts
        .iter()
        .map(|&n| {
            let mut s = base.clone();
            s.groups = n;
            let r = if n == 1 { run(&one)? } else { run(&s)? };
            Ok(ScaleRow {
                cores: n,
                aggregate_gbps: r.throughput_gbps,
                aggregate_pps: r.throughput_pps,
                ratio_to_linear: if single > 0.0 {
                    r.throughput_gbps / (n as f64 * single)
                } else {
                    0.0
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntensityRow {
    pub preset: &'static str,
    pub load_gbps: f64,
    pub chosen_label: &'static str,
    /// SDT share of each partitioned structure under the chosen label.
    pub sdt_share: Vec<(&'static str, f64)>,
    /// SDT share across the pipeline structures, weighted by capacity.
    pub sdt_pipeline_share: f64,
    pub colocated_gbps: f64,
    pub reference_gbps: f64,
    pub ratio: f64,
    pub colocated_p99_us: f64,
    pub reference_p99_us: f64,
    pub strps: usize,
    pub meets_90pct: bool,
    #[serde(skip)]
    pub colocated: MetricsReport,
    #[serde(skip)]
    pub reference: MetricsReport,
}

/// The co-located scenario for one intensity preset.
pub fn intensity_scenario(
    config: &CoreConfig,
    label: IntensityLabel,
    daemon: DaemonConfig,
) -> Scenario {
    let p = IntensityPreset::of(label);
    let mut s = Scenario::new(
        config.clone(),
        Topology::ColocatedSmt,
        Rate::Gbps(p.target_load_gbps),
    );
    s.net.intensity = p;
    s.daemon = Some(daemon);
    s
}

/// Two dedicated beefy cores, delivery on one and processing on the other.
pub fn reference_scenario(colocated: &Scenario) -> Scenario {
    let mut r = colocated.clone();
    r.topology = Topology::SplitCore;
    r.partition = PartitionSpec::Dedicated;
    r.daemon = None;
    r
}

/// For each preset: the co-located run under the daemon against the
/// two-core reference at the same load.
pub fn intensity_study(
    config: &CoreConfig,
    labels: &[IntensityLabel],
    daemon: &DaemonConfig,
    tweak: impl Fn(Scenario) -> Scenario,
) -> Result<Vec<IntensityRow>, SimError> {
    let mut rows = Vec::new();
    for &label in labels {
        let s = tweak(intensity_scenario(config, label, daemon.clone()));
        let reference = run(&reference_scenario(&s))?;
        let colocated = run(&s)?;
        let chosen = colocated.final_labels[0];
        let scheme = PartitionScheme::preset(config, chosen);
        let sdt_share = StructureKind::PIPELINE
            .iter()
            .filter(|k| k.capacity(config) > 0)
            .map(|&k| {
                (
                    k.name(),
                    scheme.limit(k, ThreadId::Sdt) as f64 / k.capacity(config) as f64,
                )
            })
            .collect();
        let ratio = if reference.throughput_gbps > 0.0 {
            colocated.throughput_gbps / reference.throughput_gbps
        } else {
            1.0
        };
        rows.push(IntensityRow {
            preset: label.name(),
            load_gbps: IntensityPreset::of(label).target_load_gbps,
            chosen_label: chosen.name(),
            sdt_share,
            sdt_pipeline_share: scheme.sdt_share(config, &StructureKind::PIPELINE),
            colocated_gbps: colocated.throughput_gbps,
            reference_gbps: reference.throughput_gbps,
            ratio,
            colocated_p99_us: colocated.p99_latency_us,
            reference_p99_us: reference.p99_latency_us,
            strps: colocated.receipts.len(),
            meets_90pct: ratio >= 0.9,
            colocated,
            reference,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostComparison {
    pub preset: &'static str,
    pub baseline_cores: usize,
    pub sdt_cores: usize,
    pub baseline: CmpCost,
    pub sdt: CmpCost,
    pub area_savings_pct: f64,
    pub power_savings_pct: f64,
}

/// A baseline of `baseline_cores` single-thread beefy cores (half
/// delivery, half processing) against `sdt_cores` SDT cores, each at the
/// activity measured in the intensity study row.
pub fn cost_comparison(
    coef: &Coefficients,
    config: &CoreConfig,
    sdt_cores: usize,
    baseline_cores: usize,
    row: &IntensityRow,
) -> Result<CostComparison, SimError> {
    if baseline_cores == 0 || baseline_cores % 2 != 0 {
        return Err(SimError::config(format!(
            "baseline core count must be even and >= 2, got {baseline_cores}"
        )));
    }
    if sdt_cores == 0 {
        return Err(SimError::config("SDT core count must be >= 1"));
    }
    let mut base_cores: Vec<CoreCost> = Vec::new();
    for _ in 0..baseline_cores / 2 {
        for a in &row.reference.activity {
            base_cores.push(power::core_cost(coef, config, false, Some(a))?);
        }
    }
    let mut sdt_cores_v = Vec::new();
    for _ in 0..sdt_cores {
        for a in &row.colocated.activity {
            sdt_cores_v.push(power::core_cost(coef, config, true, Some(a))?);
        }
    }
    let baseline = CmpCost::from_cores(base_cores);
    let sdt = CmpCost::from_cores(sdt_cores_v);
    let (area_savings_pct, power_savings_pct) = power::savings(&baseline, &sdt)?;
    Ok(CostComparison {
        preset: row.preset,
        baseline_cores: baseline.n_cores,
        sdt_cores: sdt.n_cores,
        baseline,
        sdt,
        area_savings_pct,
        power_savings_pct,
    })
}
