//! Per-run measurement report.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::Uncore;
use crate::config::{Cycle, ThreadId};
use crate::op::OpClass;
use crate::partition::{RepartitionReceipt, SchemeLabel, StructureKind};
use crate::pipeline::Core;
use crate::power::{Activity, CostKind};
use crate::workload::{NetWorkload, PacketRecord, Role};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThreadMetrics {
    pub core: usize,
    pub thread: &'static str,
    pub role: Role,
    pub ipc: f64,
    pub committed: u64,
    pub mispredicts: u64,
    pub spin_polls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyRow {
    pub core: usize,
    pub structure: &'static str,
    pub thread: &'static str,
    pub mean: f64,
    pub max: u32,
    /// Limit in force at the end of the window.
    pub limit: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub topology: &'static str,
    pub n_cores: usize,
    pub seed: u64,
    pub measure_cycles: Cycle,
    pub offered_gbps: f64,
    pub throughput_gbps: f64,
    pub throughput_pps: f64,
    /// Load delivered to the processing side.
    pub delivered_gbps: f64,
    pub completed_packets: u64,
    pub p50_latency_cycles: u64,
    pub p99_latency_cycles: u64,
    pub p50_latency_us: f64,
    pub p99_latency_us: f64,
    pub injected: u64,
    pub processed: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub conservation_ok: bool,
    pub order_violations: u64,
    pub threads: Vec<ThreadMetrics>,
    pub occupancy: Vec<OccupancyRow>,
    /// Access counts by structure, summed over cores.
    pub accesses: BTreeMap<CostKind, u64>,
    pub dram_accesses: u64,
    pub llc_queue_cycles: u64,
    /// Per-core access rates for the power model.
    pub activity: Vec<Activity>,
    pub receipts: Vec<(usize, RepartitionReceipt)>,
    pub final_labels: Vec<SchemeLabel>,
    pub flush_penalty_cycles: u64,
}

/// Nearest-rank percentile of a sorted slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn sojourn(r: &PacketRecord) -> Option<u64> {
    r.processing_done_cycle
        .or(r.delivery_done_cycle)
        .map(|done| done - r.arrival_cycle)
}

fn class_idx(c: OpClass) -> usize {
    OpClass::ALL.iter().position(|&x| x == c).unwrap()
}

/// Access counts of one core over the measured window.
pub fn core_accesses(core: &Core) -> BTreeMap<CostKind, u64> {
    let s = &core.stats;
    let sum2 = |a: [u64; 2]| a[0] + a[1];
    let issued =
        |c: OpClass| s.issued_by_class[0][class_idx(c)] + s.issued_by_class[1][class_idx(c)];
    let int = issued(OpClass::IntAlu);
    let fp = issued(OpClass::FpAlu);
    let vec = issued(OpClass::VecAlu);
    let ld = issued(OpClass::Load);
    let st = issued(OpClass::Store);
    let br = issued(OpClass::Branch);
    let total: u64 = int + fp + vec + ld + st + br;
    let dispatched = sum2(s.dispatched);
    let committed = sum2(s.committed);
    let cache = |h: &[crate::cache::HitMiss; 2]| h[0].accesses() + h[1].accesses();
    let c = &core.caches;
    let mut m = BTreeMap::new();
    m.insert(CostKind::Rob, dispatched + committed);
    m.insert(CostKind::Iq, dispatched + total);
    m.insert(CostKind::Lq, 2 * ld);
    m.insert(CostKind::Sq, 2 * st);
    m.insert(CostKind::IntReg, 3 * int + 2 * ld + 2 * st + br);
    m.insert(CostKind::FpReg, 3 * fp);
    m.insert(CostKind::VecReg, 3 * vec);
    m.insert(CostKind::RenameBypass, dispatched);
    m.insert(CostKind::Frontend, sum2(s.fetched));
    m.insert(CostKind::IntFu, int + br);
    m.insert(CostKind::FpFu, fp);
    m.insert(CostKind::VecFu, vec);
    m.insert(CostKind::LoadPort, ld);
    m.insert(CostKind::StorePort, st);
    m.insert(CostKind::L1i, cache(&c.l1i.stats));
    m.insert(CostKind::L1d, cache(&c.l1d.stats));
    m.insert(CostKind::L2, cache(&c.l2.stats));
    m.insert(CostKind::Btb, cache(&c.btb.stats));
    m.insert(CostKind::Itlb, cache(&c.itlb.stats));
    m.insert(CostKind::Dtlb, cache(&c.dtlb.stats));
    m
}

/// Per-core access rates; LLC and DRAM traffic is split evenly across the
/// cores' slices.
pub fn activity(cores: &[Core], uncore: &Uncore) -> Vec<Activity> {
    let n = cores.len().max(1) as f64;
    let llc = (uncore.llc.stats[0].accesses() + uncore.llc.stats[1].accesses()) as f64 / n;
    let dram = uncore.dram_accesses as f64 / n;
    cores
        .iter()
        .map(|core| {
            let cycles = core.stats.cycles.max(1) as f64;
            let mut a = Activity::default();
            for (k, v) in core_accesses(core) {
                a.add(k, v as f64 / cycles);
            }
            a.add(CostKind::L3, llc / cycles);
            a.dram_rate = dram / cycles;
            a
        })
        .collect()
}

pub struct ReportInputs<'a> {
    pub topology: &'static str,
    pub seed: u64,
    pub measure_cycles: Cycle,
    pub cores: &'a [Core],
    pub uncore: &'a Uncore,
    pub workload: &'a NetWorkload,
    pub receipts: Vec<(usize, RepartitionReceipt)>,
}

pub fn build_report(inp: ReportInputs<'_>) -> MetricsReport {
    let w = inp.workload;
    let params = w.params();
    let clock_hz = params.clock_ghz * 1e9;
    let secs = inp.measure_cycles as f64 / clock_hz;
    let completed = w.completed.len() as u64;
    let bits = params.pkt_bytes as f64 * 8.0;
    let pps = completed as f64 / secs;
    let mut lat: Vec<u64> = w.completed.iter().filter_map(sojourn).collect();
    lat.sort_unstable();
    let p50 = percentile(&lat, 50.0);
    let p99 = percentile(&lat, 99.0);
    let to_us = |c: u64| c as f64 / clock_hz * 1e6;
    let delivered: u64 = w
        .completed
        .iter()
        .filter(|r| r.delivery_done_cycle.is_some())
        .count() as u64;
    let totals = w.totals();
    let n_queues = w.n_queues() as f64;
    let offered_gbps = params.rate.gbps() * n_queues;

    let mut threads = Vec::new();
    let mut occupancy = Vec::new();
    let mut accesses: BTreeMap<CostKind, u64> = BTreeMap::new();
    for core in inp.cores {
        for t in ThreadId::ALL {
            threads.push(ThreadMetrics {
                core: core.id,
                thread: t.name(),
                role: w.role(core.id, t),
                ipc: core.stats.ipc(t),
                committed: core.stats.committed[t.index()],
                mispredicts: core.stats.mispredicts[t.index()],
                spin_polls: w.spin_polls(core.id, t),
            });
            for kind in StructureKind::ALL {
                if let Some(o) = core.stats.occupancy(kind, t) {
                    occupancy.push(OccupancyRow {
                        core: core.id,
                        structure: kind.name(),
                        thread: t.name(),
                        mean: o.sum as f64 / core.stats.cycles.max(1) as f64,
                        max: o.max,
                        limit: core.limit(kind, t),
                    });
                }
            }
        }
        for (k, v) in core_accesses(core) {
            *accesses.entry(k).or_insert(0) += v;
        }
    }
    *accesses.entry(CostKind::L3).or_insert(0) +=
        inp.uncore.llc.stats[0].accesses() + inp.uncore.llc.stats[1].accesses();

    let flush_penalty_cycles = inp.receipts.iter().map(|(_, r)| r.penalty).sum();
    MetricsReport {
        topology: inp.topology,
        n_cores: inp.cores.len(),
        seed: inp.seed,
        measure_cycles: inp.measure_cycles,
        offered_gbps,
        throughput_gbps: pps * bits / 1e9,
        throughput_pps: pps,
        delivered_gbps: delivered as f64 * bits / secs / 1e9,
        completed_packets: completed,
        p50_latency_cycles: p50,
        p99_latency_cycles: p99,
        p50_latency_us: to_us(p50),
        p99_latency_us: to_us(p99),
        injected: totals.injected,
        processed: totals.processed,
        dropped: totals.dropped,
        in_flight: w.in_flight(),
        conservation_ok: w.conservation_holds(),
        order_violations: w.order_violations(),
        threads,
        occupancy,
        accesses,
        dram_accesses: inp.uncore.dram_accesses,
        llc_queue_cycles: inp.uncore.llc_queue_cycles,
        activity: activity(inp.cores, inp.uncore),
        final_labels: inp.cores.iter().map(|c| c.label()).collect(),
        receipts: inp.receipts,
        flush_penalty_cycles,
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// IPC of every thread with the given role kind.
    pub fn ipc_of(&self, pred: impl Fn(Role) -> bool) -> f64 {
        self.threads
            .iter()
            .filter(|t| pred(t.role))
            .map(|t| t.ipc)
            .sum()
    }
}
