//! Battery drain, wake/transmit cost, and cumulative consumption accounting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Device, DeviceState, SimTime, MS_PER_MINUTE};

/// Drain rates in percent per minute; one-off costs in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteryModel {
    pub idle_drain_pct_per_min: f64,
    pub sleep_drain_pct_per_min: f64,
    pub active_drain_pct_per_min: f64,
    pub wake_cost_pct: f64,
    pub tx_cost_pct_per_kb: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel {
            idle_drain_pct_per_min: 0.01,
            sleep_drain_pct_per_min: 0.0005,
            active_drain_pct_per_min: 0.05,
            wake_cost_pct: 0.2,
            tx_cost_pct_per_kb: 0.3,
        }
    }
}

impl BatteryModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.idle_drain_pct_per_min,
            self.sleep_drain_pct_per_min,
            self.active_drain_pct_per_min,
            self.wake_cost_pct,
            self.tx_cost_pct_per_kb,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "battery model values must be finite and >= 0".into(),
            ));
        }
        if !(self.sleep_drain_pct_per_min <= self.idle_drain_pct_per_min
            && self.idle_drain_pct_per_min <= self.active_drain_pct_per_min)
        {
            return Err(Error::Validation(
                "drain rates must satisfy sleep <= idle <= active".into(),
            ));
        }
        Ok(())
    }

    pub fn drain_per_min(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Idle => self.idle_drain_pct_per_min,
            DeviceState::Sleep => self.sleep_drain_pct_per_min,
            DeviceState::Active => self.active_drain_pct_per_min,
        }
    }

    /// Wake plus per-kB transmission cost (1 kB = 1000 bytes).
    pub fn transmit_cost(&self, payload_bytes: u64) -> f64 {
        self.wake_cost_pct + self.tx_cost_pct_per_kb * payload_bytes as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub initial_pct: f64,
    pub consumed_pct: f64,
    pub skipped_tx: u64,
}

/// Per-device consumption; `consumed_pct` tracks `initial_pct - battery_pct`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new(devices: &[Device]) -> Self {
        EnergyLedger {
            entries: devices
                .iter()
                .map(|d| LedgerEntry {
                    initial_pct: d.battery_pct,
                    consumed_pct: 0.0,
                    skipped_tx: 0,
                })
                .collect(),
        }
    }

    fn charge(&mut self, device: usize, pct: f64) {
        self.entries[device].consumed_pct += pct;
    }

    /// Largest deviation between the ledger and actual battery deltas.
    pub fn conservation_error(&self, devices: &[Device]) -> f64 {
        self.entries
            .iter()
            .zip(devices)
            .map(|(e, d)| ((e.initial_pct - d.battery_pct) - e.consumed_pct).abs())
            .fold(0.0, f64::max)
    }

    pub fn export(&self) -> String {
        let mut s = String::from("device,initial_pct,consumed_pct,skipped_tx\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{}",
                e.initial_pct, e.consumed_pct, e.skipped_tx
            );
        }
        let _ = writeln!(s, "total,,{},", total_consumption(self));
        s
    }
}

fn drain(device: &mut Device, pct: f64, ledger: &mut EnergyLedger) -> f64 {
    let before = device.battery_pct;
    device.battery_pct = (before - pct).max(0.0);
    let used = before - device.battery_pct;
    ledger.charge(device.id, used);
    if device.battery_pct <= 0.0 {
        device.battery_pct = 0.0;
        device.state = DeviceState::Sleep;
    }
    used
}

/// Applies the current state's drain over `dt_ms`. Devices that hit zero sleep for good.
pub fn advance(device: &mut Device, dt_ms: u64, model: &BatteryModel, ledger: &mut EnergyLedger) {
    if dt_ms == 0 || device.is_dead() {
        return;
    }
    let pct = model.drain_per_min(device.state) * dt_ms as f64 / MS_PER_MINUTE as f64;
    drain(device, pct, ledger);
}

/// Wakes the device, pays wake and transmission cost, records `last_tx` and
/// puts it back to sleep. Dead devices skip and are flagged in the ledger.
pub fn wake_and_transmit(
    device: &mut Device,
    model: &BatteryModel,
    payload_bytes: u64,
    now: SimTime,
    ledger: &mut EnergyLedger,
) -> Option<f64> {
    if device.is_dead() {
        ledger.entries[device.id].skipped_tx += 1;
        return None;
    }
    device.state = DeviceState::Active;
    let used = drain(device, model.transmit_cost(payload_bytes), ledger);
    device.last_tx = now;
    device.state = DeviceState::Sleep;
    Some(used)
}

/// Battery level right after a transmission `elapsed_ms` into the day, the
/// device resting in `rest` until then.
pub fn battery_at(
    device: &Device,
    elapsed_ms: u64,
    model: &BatteryModel,
    rest: DeviceState,
) -> f64 {
    if device.is_dead() {
        return 0.0;
    }
    let pre = (device.battery_pct
        - model.drain_per_min(rest) * elapsed_ms as f64 / MS_PER_MINUTE as f64)
        .max(0.0);
    if pre <= 0.0 {
        return 0.0;
    }
    (pre - model.transmit_cost(device.payload_bytes)).max(0.0)
}

pub fn total_consumption(ledger: &EnergyLedger) -> f64 {
    ledger.entries.iter().map(|e| e.consumed_pct).sum()
}

pub fn normalize(values: &[f64], reference_max: f64) -> Result<Vec<f64>> {
    if reference_max.is_nan() || reference_max <= 0.0 {
        return Err(Error::Validation(format!(
            "reference {reference_max} must be positive"
        )));
    }
    Ok(values.iter().map(|v| v / reference_max).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_device, DomainId};
    use proptest::prelude::*;

    fn dev(b: f64) -> Device {
        make_device(0, DomainId::AIR_Q, b, 1000).unwrap()
    }

    fn tx_costs() -> BatteryModel {
        BatteryModel {
            wake_cost_pct: 0.2,
            tx_cost_pct_per_kb: 0.3,
            ..BatteryModel::default()
        }
    }

    #[test]
    fn default_model_is_valid() {
        BatteryModel::default().validate().unwrap();
        let bad = BatteryModel {
            sleep_drain_pct_per_min: 1.0,
            ..BatteryModel::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn idle_drain_one_minute() {
        let mut d = dev(100.0);
        let mut l = EnergyLedger::new(std::slice::from_ref(&d));
        advance(&mut d, 60_000, &BatteryModel::default(), &mut l);
        assert!((d.battery_pct - 99.99).abs() < 1e-12);
        assert!((l.entries[0].consumed_pct - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_sleep_drain_is_free() {
        let mut d = dev(50.0);
        d.state = DeviceState::Sleep;
        let mut l = EnergyLedger::new(std::slice::from_ref(&d));
        let m = BatteryModel {
            sleep_drain_pct_per_min: 0.0,
            ..BatteryModel::default()
        };
        advance(&mut d, 86_400_000, &m, &mut l);
        assert_eq!(d.battery_pct, 50.0);
    }

    #[test]
    fn drain_clamps_and_sleeps() {
        let mut d = dev(0.005);
        let mut l = EnergyLedger::new(std::slice::from_ref(&d));
        advance(&mut d, 60_000, &BatteryModel::default(), &mut l);
        assert_eq!(d.battery_pct, 0.0);
        assert_eq!(d.state, DeviceState::Sleep);
        assert!((l.entries[0].consumed_pct - 0.005).abs() < 1e-15);
    }

    #[test]
    fn transmit_costs() {
        let mut d = dev(100.0);
        let mut l = EnergyLedger::new(std::slice::from_ref(&d));
        let used = wake_and_transmit(&mut d, &tx_costs(), 1000, SimTime(777), &mut l).unwrap();
        assert!((d.battery_pct - 99.5).abs() < 1e-12);
        assert!((used - 0.5).abs() < 1e-12);
        assert_eq!(d.last_tx, SimTime(777));
        assert_eq!(d.state, DeviceState::Sleep);

        let mut d = dev(100.0);
        wake_and_transmit(&mut d, &tx_costs(), 0, SimTime(1), &mut l).unwrap();
        assert!((d.battery_pct - 99.8).abs() < 1e-12);
    }

    #[test]
    fn dead_device_skips() {
        let mut d = dev(0.0);
        let mut l = EnergyLedger::new(std::slice::from_ref(&d));
        assert!(wake_and_transmit(&mut d, &tx_costs(), 1000, SimTime(1), &mut l).is_none());
        assert_eq!(l.entries[0].skipped_tx, 1);
        assert_eq!(d.last_tx, SimTime(0));
    }

    #[test]
    fn battery_at_cases() {
        let d = dev(100.0);
        let m = tx_costs();
        assert!((battery_at(&d, 0, &m, DeviceState::Sleep) - 99.5).abs() < 1e-12);
        let m2 = BatteryModel {
            sleep_drain_pct_per_min: 0.001,
            ..m
        };
        assert!((battery_at(&d, 100 * 60_000, &m2, DeviceState::Sleep) - 99.4).abs() < 1e-12);
        let m0 = BatteryModel {
            sleep_drain_pct_per_min: 0.0,
            ..m
        };
        assert_eq!(
            battery_at(&d, 900 * 60_000, &m0, DeviceState::Sleep),
            battery_at(&d, 0, &m0, DeviceState::Sleep)
        );
    }

    #[test]
    fn totals_and_normalization() {
        assert_eq!(total_consumption(&EnergyLedger::default()), 0.0);
        let l = EnergyLedger {
            entries: vec![
                LedgerEntry {
                    initial_pct: 100.0,
                    consumed_pct: 1.5,
                    skipped_tx: 0,
                },
                LedgerEntry {
                    initial_pct: 100.0,
                    consumed_pct: 2.5,
                    skipped_tx: 0,
                },
            ],
        };
        assert_eq!(total_consumption(&l), 4.0);
        assert_eq!(
            normalize(&[2.0, 4.0, 8.0], 8.0).unwrap(),
            vec![0.25, 0.5, 1.0]
        );
        assert_eq!(normalize(&[0.0], 5.0).unwrap(), vec![0.0]);
        assert!(normalize(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ledger_conserves(ops in proptest::collection::vec((0u8..4, 0u64..5_000_000), 1..60), start in 0.0f64..100.0) {
            let mut d = dev(start);
            let mut l = EnergyLedger::new(std::slice::from_ref(&d));
            let m = BatteryModel::default();
            let mut last_total = 0.0;
            for (kind, dt) in ops {
                match kind {
                    0 => d.state = DeviceState::Idle,
                    1 => d.state = DeviceState::Active,
                    2 => { wake_and_transmit(&mut d, &m, dt % 4000, SimTime(dt), &mut l); }
                    _ => advance(&mut d, dt, &m, &mut l),
                }
                if d.is_dead() { d.state = DeviceState::Sleep; }
                prop_assert!(l.conservation_error(std::slice::from_ref(&d)) < 1e-9);
                let t = total_consumption(&l);
                prop_assert!(t >= last_total);
                last_total = t;
            }
        }

        #[test]
        fn later_schedule_never_helps(a in 0u64..86_400_000, b in 0u64..86_400_000, start in 0.0f64..100.0) {
            let d = dev(start);
            let m = BatteryModel::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(battery_at(&d, lo, &m, DeviceState::Sleep) >= battery_at(&d, hi, &m, DeviceState::Sleep));
        }
    }
}
