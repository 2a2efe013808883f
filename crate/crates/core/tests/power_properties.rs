//! Area and power never grow when a structure shrinks.

use proptest::prelude::*;

use sdt_core::experiments::SweepKind;
use sdt_core::power::{core_cost, Activity, Coefficients, CostKind};
use sdt_core::CoreConfig;

fn activity() -> impl Strategy<Value = Activity> {
    prop::collection::vec(0.0f64..4.0, CostKind::ALL.len()).prop_flat_map(|rates| {
        (0.0f64..0.1).prop_map(move |dram| {
            let mut a = Activity::default();
            for (k, r) in CostKind::ALL.iter().zip(&rates) {
                a.add(*k, *r);
            }
            a.dram_rate = dram;
            a
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn shrinking_never_costs_more(
        kind_idx in 0..SweepKind::ALL.len(),
        frac in 0.0f64..1.0,
        sdt in any::<bool>(),
        act in activity(),
    ) {
        let coef = Coefficients::shipped();
        let kind = SweepKind::ALL[kind_idx];
        let big = CoreConfig::beefy();
        let full = kind.get(&big);
        let small_size = ((full as f64 * frac) as u64).max(1);
        let small = kind.apply(&big, small_size);
        let a = core_cost(&coef, &big, sdt, Some(&act)).unwrap();
        let b = core_cost(&coef, &small, sdt, Some(&act)).unwrap();
        prop_assert!(b.area_units <= a.area_units + 1e-12);
        prop_assert!(b.static_power <= a.static_power + 1e-12);
        prop_assert!(b.dynamic_power <= a.dynamic_power + 1e-12);
    }

    #[test]
    fn fewer_cores_save(n in 1usize..64, act in activity()) {
        let coef = Coefficients::shipped();
        let cfg = CoreConfig::beefy();
        let one = core_cost(&coef, &cfg, true, Some(&act)).unwrap();
        let base = core_cost(&coef, &cfg, false, Some(&act)).unwrap();
        // n SDT cores against 2n baseline cores at equal activity.
        prop_assert!(n as f64 * one.area_units < 2.0 * n as f64 * base.area_units);
        prop_assert!(n as f64 * one.power_units() < 2.0 * n as f64 * base.power_units());
    }
}
