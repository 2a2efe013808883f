//! Load-driven controller that picks a partition preset per core.

use serde::{Deserialize, Serialize};

use crate::config::Cycle;
use crate::error::SimError;
use crate::partition::{PartitionScheme, RepartitionMode, RepartitionReceipt, SchemeLabel};
use crate::pipeline::{Machine, Workload};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaemonConfig {
    pub period_ms: f64,
    /// Loads at or above this select the low-intensity preset.
    pub low_floor_gbps: f64,
    /// Loads below this select the high-intensity preset.
    pub high_ceiling_gbps: f64,
    pub ewma_alpha: f64,
    pub hysteresis_margin_gbps: f64,
    pub mode: RepartitionMode,
    /// Observed loads are clamped to this before filtering.
    pub max_load_gbps: f64,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        DaemonConfig {
            period_ms: 1.0,
            low_floor_gbps: 6.0,
            high_ceiling_gbps: 1.0,
            ewma_alpha: 0.5,
            hysteresis_margin_gbps: 0.25,
            mode: RepartitionMode::Flush,
            max_load_gbps: 100.0,
        }
    }
}

impl DaemonConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.high_ceiling_gbps < self.low_floor_gbps) {
            return Err(SimError::config(format!(
                "daemon thresholds need high_ceiling < low_floor, got ({}, {})",
                self.low_floor_gbps, self.high_ceiling_gbps
            )));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(SimError::config(format!(
                "ewma_alpha must be in (0, 1], got {}",
                self.ewma_alpha
            )));
        }
        if !(self.period_ms > 0.0 && self.period_ms.is_finite()) {
            return Err(SimError::config(format!(
                "period_ms must be > 0, got {}",
                self.period_ms
            )));
        }
        if !(self.hysteresis_margin_gbps >= 0.0) {
            return Err(SimError::config("hysteresis_margin must be >= 0"));
        }
        if !(self.max_load_gbps > 0.0) {
            return Err(SimError::config("max_load_gbps must be > 0"));
        }
        Ok(())
    }

    pub fn period_cycles(&self, clock_ghz: f64) -> Cycle {
        ((self.period_ms * 1e-3 * clock_ghz * 1e9).round() as Cycle).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DaemonState {
    pub ewma_load: Option<f64>,
    pub current_label: SchemeLabel,
    pub last_tick: Cycle,
    /// Cumulative delivered bytes at the last tick.
    pub last_bytes: u64,
    pub strps: u64,
}

impl DaemonState {
    pub fn new(label: SchemeLabel, now: Cycle, delivered_bytes: u64) -> Self {
        DaemonState {
            ewma_load: None,
            current_label: label,
            last_tick: now,
            last_bytes: delivered_bytes,
            strps: 0,
        }
    }
}

/// Rank of a preset by SDT share.
fn rank(label: SchemeLabel) -> i32 {
    match label {
        SchemeLabel::HighIntensity => 0,
        SchemeLabel::MediumIntensity => 1,
        SchemeLabel::LowIntensity => 2,
        SchemeLabel::Baseline | SchemeLabel::Custom => -1,
    }
}

/// Delivered load over a window, in Gbps.
pub fn window_load_gbps(bytes: u64, window_cycles: Cycle, clock_ghz: f64) -> f64 {
    if window_cycles == 0 {
        return 0.0;
    }
    let secs = window_cycles as f64 / (clock_ghz * 1e9);
    bytes as f64 * 8.0 / secs / 1e9
}

/// Folds a window's load into the filter and returns the filtered load.
pub fn observe(state: &mut DaemonState, cfg: &DaemonConfig, load_gbps: f64) -> f64 {
    let x = load_gbps.clamp(0.0, cfg.max_load_gbps);
    let v = match state.ewma_load {
        None => x,
        Some(prev) => cfg.ewma_alpha * x + (1.0 - cfg.ewma_alpha) * prev,
    };
    state.ewma_load = Some(v);
    v
}

/// Threshold classification without hysteresis.
pub fn classify(load: f64, cfg: &DaemonConfig) -> SchemeLabel {
    if load >= cfg.low_floor_gbps {
        SchemeLabel::LowIntensity
    } else if load >= cfg.high_ceiling_gbps {
        SchemeLabel::MediumIntensity
    } else {
        SchemeLabel::HighIntensity
    }
}

/// Preset for `load` given the current label. Moving to a larger SDT share
/// requires the load to clear the threshold by the margin, and likewise
/// for moving down.
pub fn select_class(load: f64, current: SchemeLabel, cfg: &DaemonConfig) -> SchemeLabel {
    let cur = rank(current);
    if cur < 0 {
        return classify(load, cfg);
    }
    let m = cfg.hysteresis_margin_gbps;
    let up = classify(load - m, cfg);
    if rank(up) > cur {
        return up;
    }
    let down = classify(load + m, cfg);
    if rank(down) < cur {
        return down;
    }
    current
}

/// One daemon period on `core`. `delivered_bytes` is the cumulative byte
/// count delivered by the core's delivery thread.
pub fn daemon_tick<W: Workload>(
    state: &mut DaemonState,
    cfg: &DaemonConfig,
    machine: &mut Machine<W>,
    core: usize,
    delivered_bytes: u64,
) -> Result<Option<RepartitionReceipt>, SimError> {
    let now = machine.now();
    let clock = machine.cores[core].config().clock_ghz;
    let load = window_load_gbps(
        delivered_bytes - state.last_bytes,
        now - state.last_tick,
        clock,
    );
    state.last_tick = now;
    state.last_bytes = delivered_bytes;
    let filtered = observe(state, cfg, load);
    let label = select_class(filtered, state.current_label, cfg);
    if label == state.current_label {
        return Ok(None);
    }
    let scheme = PartitionScheme::preset(machine.cores[core].config(), label);
    let receipt = machine.apply_strp(core, scheme, cfg.mode)?;
    state.current_label = label;
    state.strps += 1;
    Ok(Some(receipt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DaemonConfig {
        DaemonConfig::default()
    }

    #[test]
    fn load_arithmetic() {
        assert_eq!(window_load_gbps(0, 3_000_000, 3.0), 0.0);
        let l = window_load_gbps(17_578 * 64, 3_000_000, 3.0);
        assert!((l - 17_578.0 * 64.0 * 8.0 / 1e-3 / 1e9).abs() < 1e-9);
        assert!((l - 9.0).abs() < 0.01);
        let over = window_load_gbps(1_125_000 * 64, 3_000_000, 3.0);
        assert!((over - 576.0).abs() < 1e-9);
    }

    #[test]
    fn overload_is_clamped() {
        let mut s = DaemonState::new(SchemeLabel::Baseline, 0, 0);
        assert_eq!(observe(&mut s, &cfg(), 576.0), 100.0);
        assert_eq!(
            select_class(100.0, SchemeLabel::Baseline, &cfg()),
            SchemeLabel::LowIntensity
        );
    }

    #[test]
    fn operating_points() {
        let c = cfg();
        for cur in [
            SchemeLabel::Baseline,
            SchemeLabel::HighIntensity,
            SchemeLabel::MediumIntensity,
            SchemeLabel::LowIntensity,
        ] {
            assert_eq!(select_class(9.0, cur, &c), SchemeLabel::LowIntensity);
            assert_eq!(select_class(4.0, cur, &c), SchemeLabel::MediumIntensity);
            assert_eq!(select_class(0.5, cur, &c), SchemeLabel::HighIntensity);
        }
    }

    #[test]
    fn hysteresis_holds_label_near_threshold() {
        let c = cfg();
        let mut s = DaemonState::new(SchemeLabel::Baseline, 0, 0);
        let mut label = SchemeLabel::Baseline;
        let mut changes = 0;
        for i in 0..40 {
            let raw = if i % 2 == 0 { 0.9 } else { 1.1 };
            let f = observe(&mut s, &c, raw);
            let next = select_class(f, label, &c);
            changes += (next != label) as u32;
            label = next;
        }
        assert_eq!(changes, 1);
    }

    #[test]
    fn step_converges_within_two_periods() {
        let c = cfg();
        let mut s = DaemonState::new(SchemeLabel::Baseline, 0, 0);
        let mut label = select_class(observe(&mut s, &c, 0.5), SchemeLabel::Baseline, &c);
        assert_eq!(label, SchemeLabel::HighIntensity);
        let mut periods = 0;
        while label != SchemeLabel::LowIntensity {
            label = select_class(observe(&mut s, &c, 9.0), label, &c);
            periods += 1;
        }
        assert!(periods <= 2, "{periods}");
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        c.high_ceiling_gbps = 7.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.ewma_alpha = 0.0;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
        assert_eq!(cfg().period_cycles(3.0), 3_000_000);
    }
}
