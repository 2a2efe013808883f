//! Scenario strategies and property checks shared by the property suite
//! and the acceptance runner.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use sdt_core::daemon::DaemonConfig;
use sdt_core::experiments::{build_machine, run};
use sdt_core::op::MicroOp;
use sdt_core::pipeline::{Machine, Stage, StreamWorkload};
use sdt_core::scenario::{PartitionSpec, Scenario, Topology};
use sdt_core::workload::{IntensityLabel, IntensityPreset, Rate};
use sdt_core::{
    CoreConfig, PartitionScheme, RepartitionMode, SchemeLabel, StructureKind, ThreadId,
};

pub const CASES: u32 = 100;

/// Structures whose entries are held by in-flight ops.
pub const QUEUES: [StructureKind; 7] = [
    StructureKind::Iq,
    StructureKind::Lq,
    StructureKind::Sq,
    StructureKind::Rob,
    StructureKind::IntReg,
    StructureKind::FpReg,
    StructureKind::VecReg,
];

pub fn topology() -> impl Strategy<Value = Topology> {
    prop_oneof![
        Just(Topology::DedicatedDeliveryCore),
        Just(Topology::ColocatedSmt),
        Just(Topology::SplitCore),
    ]
}

pub fn label() -> impl Strategy<Value = SchemeLabel> {
    prop_oneof![
        Just(SchemeLabel::Baseline),
        Just(SchemeLabel::HighIntensity),
        Just(SchemeLabel::MediumIntensity),
        Just(SchemeLabel::LowIntensity),
    ]
}

pub fn intensity() -> impl Strategy<Value = IntensityLabel> {
    prop_oneof![
        Just(IntensityLabel::Low),
        Just(IntensityLabel::Medium),
        Just(IntensityLabel::High),
    ]
}

pub fn rate() -> impl Strategy<Value = Rate> {
    prop_oneof![
        1 => Just(Rate::Max),
        1 => Just(Rate::Gbps(0.0)),
        4 => (0.1f64..40.0).prop_map(Rate::Gbps),
    ]
}

prop_compose! {
    pub fn scenario()(
        minimalist in any::<bool>(),
        topo in topology(),
        rate in rate(),
        preset in label(),
        intensity in intensity(),
        groups in 1usize..=2,
        pkt in prop_oneof![Just(64u32), 65u32..1500],
        daemon in any::<bool>(),
        seed in any::<u64>(),
        warmup in 0u64..3000,
        measure in 2000u64..8000,
    ) -> Scenario {
        let config = if minimalist { CoreConfig::minimalist() } else { CoreConfig::beefy() };
        let mut s = Scenario::new(config, topo, rate).with_seed(seed);
        s.net.pkt_bytes = pkt;
        s.net.intensity = IntensityPreset::of(intensity);
        s.groups = groups;
        if topo == Topology::ColocatedSmt {
            s.partition = PartitionSpec::Preset(preset);
            if daemon {
                s.daemon = Some(DaemonConfig { period_ms: 0.0005, ..DaemonConfig::default() });
            }
        }
        s.warmup_cycles = warmup;
        s.measure_cycles = measure;
        s
    }
}

pub fn check_partition_safety(
    s: &Scenario,
    strp_at: u64,
    next: SchemeLabel,
    drain: bool,
) -> Result<(), TestCaseError> {
    let mut m = build_machine(s).unwrap();
    let mode = if drain {
        RepartitionMode::Drain
    } else {
        RepartitionMode::Flush
    };
    for cycle in 0..4000u64 {
        m.step().unwrap();
        if cycle == strp_at {
            let scheme = PartitionScheme::preset(&s.config, next);
            m.apply_strp(0, scheme, mode).unwrap();
        }
        for c in &m.cores {
            if let Err(e) = c.check_partition_safety() {
                prop_assert!(false, "cycle {cycle}, core {}: {e}", c.id);
            }
        }
    }
    Ok(())
}

pub fn check_conservation(s: &Scenario) -> Result<(), TestCaseError> {
    let r = run(s).unwrap();
    prop_assert!(r.conservation_ok);
    prop_assert_eq!(r.injected, r.processed + r.dropped + r.in_flight);
    prop_assert!(r.p99_latency_cycles >= r.p50_latency_cycles);
    prop_assert_eq!(r.order_violations, 0);
    // Limits move under STRPs; per-cycle safety is checked separately.
    for o in r.occupancy.iter().filter(|_| r.receipts.is_empty()) {
        prop_assert!(
            o.max <= o.limit,
            "{} {} max {} > limit {}",
            o.structure,
            o.thread,
            o.max,
            o.limit
        );
    }
    Ok(())
}

pub fn check_determinism(s: &Scenario) -> Result<(), TestCaseError> {
    let a = run(s).unwrap().to_json();
    let b = run(s).unwrap().to_json();
    prop_assert_eq!(a, b);
    Ok(())
}

/// A dependent chain commits no earlier than the sum of its latencies after
/// the first issue.
pub fn check_latency_composition(lats: &[u32]) -> Result<(), TestCaseError> {
    let cfg = CoreConfig::beefy();
    let ops: Vec<MicroOp> = lats
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let i = i as u64;
            let mut op = MicroOp::int(i, 0x1000 + 4 * i);
            op.exec_latency = l;
            if i > 0 {
                op = op.with_deps([i - 1]);
            }
            op
        })
        .collect();
    let wl = StreamWorkload::new(ops, vec![]);
    let mut m = Machine::single(
        cfg.clone(),
        PartitionScheme::dedicated(&cfg, ThreadId::Sdt),
        wl,
    )
    .unwrap();
    m.core_mut().trace_enabled = true;
    let mut first_issue = None;
    let mut last_commit = None;
    let mut commits = 0;
    for _ in 0..5000 {
        let ev = m.step().unwrap();
        for r in &ev.trace {
            if r.stage == Stage::Issue && first_issue.is_none() {
                first_issue = Some(r.cycle);
            }
        }
        commits += ev.commits.len();
        if let Some(c) = ev.commits.last() {
            last_commit = Some(c.cycle);
        }
        if commits == lats.len() {
            break;
        }
    }
    prop_assert_eq!(commits, lats.len());
    let total: u64 = lats.iter().map(|&l| l as u64).sum();
    prop_assert!(last_commit.unwrap() >= first_issue.unwrap() + total);
    Ok(())
}

fn usage_vector(m: &Machine<sdt_core::workload::NetWorkload>, core: usize) -> Vec<u32> {
    StructureKind::ALL
        .iter()
        .flat_map(|&k| ThreadId::ALL.map(|t| m.cores[core].usage(k, t)))
        .collect()
}

/// After a flush every queue usage register reads zero, and a second flush
/// changes nothing.
pub fn check_post_flush(s: &Scenario, cycles: u64) -> Result<(), TestCaseError> {
    let mut m = build_machine(s).unwrap();
    m.run_for(cycles).unwrap();
    for core in 0..m.cores.len() {
        prop_assert_eq!(m.flush(core), 200);
        let c = &m.cores[core];
        prop_assert!(c.is_empty());
        for kind in QUEUES {
            for t in ThreadId::ALL {
                prop_assert_eq!(c.usage(kind, t), 0, "{} {}", kind, t.name());
            }
        }
        prop_assert!(c.check_partition_safety().is_ok());
        let before = usage_vector(&m, core);
        m.flush(core);
        prop_assert_eq!(before, usage_vector(&m, core));
    }
    Ok(())
}
