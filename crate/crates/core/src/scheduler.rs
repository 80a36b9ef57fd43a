//! The scheduling environment: state/action spaces, the minimum-interval
//! constraint, the reward terms and the one-day episode transition.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy;
use crate::error::{Error, Result};
use crate::model::{minutes_to_simtime, DeviceState, SimTime, MINUTES_PER_DAY, MS_PER_MINUTE};
use crate::netsim::{Engine, EventKind, LatencySample};
use crate::rtps::Phase;
use crate::sim::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub batteries: Vec<f64>,
    /// Minute of the previous day's transmission, in [0, 1440].
    pub last_tx_min: Vec<f64>,
}

impl StateVector {
    pub fn len(&self) -> usize {
        self.batteries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batteries.is_empty()
    }

    /// Network input: batteries / 100 followed by last transmissions / 1440.
    pub fn normalized(&self) -> Vec<f64> {
        self.batteries
            .iter()
            .map(|b| b / 100.0)
            .chain(self.last_tx_min.iter().map(|t| t / MINUTES_PER_DAY))
            .collect()
    }
}

/// Per-device transmission minute within the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn clamped(&self) -> ActionVector {
        ActionVector(
            self.0
                .iter()
                .map(|a| {
                    if a.is_nan() {
                        0.0
                    } else {
                        a.clamp(0.0, MINUTES_PER_DAY)
                    }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstraint {
    pub dt_min_minutes: f64,
}

impl ScheduleConstraint {
    pub fn new(dt_min_minutes: f64) -> Result<Self> {
        if !(0.0..MINUTES_PER_DAY).contains(&dt_min_minutes) {
            return Err(Error::Validation(format!(
                "dt_min {dt_min_minutes} outside [0,1440)"
            )));
        }
        Ok(ScheduleConstraint { dt_min_minutes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_energy: f64,
    pub r_timeliness: f64,
    pub r_consecutive: f64,
    pub r_total: f64,
    pub d_threshold_ms: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: StateVector,
    pub a: ActionVector,
    pub r: f64,
    pub s_next: StateVector,
    pub done: bool,
}

/// `a'_i = max(a_i + dt_min, last_tx_i)`, with `last_tx` on the same minute axis as `a`.
pub fn enforce_min_interval(
    a: &[f64],
    last_tx: &[f64],
    constraint: &ScheduleConstraint,
) -> Vec<f64> {
    a.iter()
        .zip(last_tx)
        .map(|(ai, li)| (ai + constraint.dt_min_minutes).max(*li))
        .collect()
}

pub fn reward_energy(batteries_after: &[f64]) -> f64 {
    batteries_after.iter().sum()
}

pub fn reward_timeliness(delays_ms: &[f64], d_threshold_ms: f64) -> f64 {
    -delays_ms
        .iter()
        .map(|d| (d - d_threshold_ms).max(0.0))
        .sum::<f64>()
}

/// The gap deficit is evaluated as `(a + dt) - a'`, so an `a'` produced by
/// [`enforce_min_interval`] scores exactly zero.
pub fn reward_consecutive(
    a: &[f64],
    a_prime: &[f64],
    constraint: &ScheduleConstraint,
    lambda: f64,
) -> f64 {
    let deficit: f64 = a
        .iter()
        .zip(a_prime)
        .map(|(ai, api)| ((ai + constraint.dt_min_minutes) - api).max(0.0))
        .sum();
    if deficit == 0.0 {
        0.0
    } else {
        -lambda * deficit
    }
}

pub fn reward_total(
    r_energy: f64,
    r_timeliness: f64,
    r_consecutive: f64,
    d_threshold_ms: f64,
    lambda: f64,
) -> RewardBreakdown {
    RewardBreakdown {
        r_energy,
        r_timeliness,
        r_consecutive,
        r_total: r_energy + r_timeliness + r_consecutive,
        d_threshold_ms,
        lambda,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRanges {
    pub battery: (f64, f64),
    pub last_tx_min: (f64, f64),
}

impl Default for WhatIfRanges {
    fn default() -> Self {
        WhatIfRanges {
            battery: (0.0, 100.0),
            last_tx_min: (0.0, MINUTES_PER_DAY),
        }
    }
}

impl WhatIfRanges {
    pub fn validate(&self) -> Result<()> {
        let (bl, bh) = self.battery;
        let (tl, th) = self.last_tx_min;
        if !(0.0 <= bl && bl <= bh && bh <= 100.0 && 0.0 <= tl && tl <= th && th <= MINUTES_PER_DAY)
        {
            return Err(Error::Validation(format!(
                "invalid what-if ranges {self:?}"
            )));
        }
        Ok(())
    }
}

/// Latin-hypercube states: every dimension is cut into `n_states` equal bins
/// and each bin is used exactly once, in a seeded order. A single state sits
/// at the middle of the ranges.
pub fn whatif_generate(
    seed: u64,
    n_states: usize,
    n_devices: usize,
    ranges: &WhatIfRanges,
) -> Result<Vec<StateVector>> {
    if n_states == 0 {
        return Err(Error::Validation("n_states must be >= 1".into()));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7768_6174_6966);
    let mut column = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let width = (hi - lo) / n_states as f64;
        let mut bins: Vec<usize> = (0..n_states).collect();
        bins.shuffle(&mut rng);
        bins.into_iter()
            .map(|b| {
                let u: f64 = if n_states == 1 { 0.5 } else { rng.gen() };
                lo + width * (b as f64 + u)
            })
            .collect()
    };
    let batteries: Vec<Vec<f64>> = (0..n_devices).map(|_| column(ranges.battery)).collect();
    let last_tx: Vec<Vec<f64>> = (0..n_devices).map(|_| column(ranges.last_tx_min)).collect();
    Ok((0..n_states)
        .map(|k| StateVector {
            batteries: batteries.iter().map(|c| c[k]).collect(),
            last_tx_min: last_tx.iter().map(|c| c[k]).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub constraint: ScheduleConstraint,
    pub d_threshold_ms: f64,
    pub lambda: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            constraint: ScheduleConstraint {
                dt_min_minutes: 30.0,
            },
            d_threshold_ms: 180.0,
            lambda: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub s_next: StateVector,
    pub reward: RewardBreakdown,
    pub samples: Vec<LatencySample>,
    /// Realized transmission minutes after the interval constraint.
    pub tx_minutes: Vec<f64>,
    /// Worst per-device publish delay `D_i` (0 when nothing was delivered).
    pub delays_ms: Vec<f64>,
    /// Post-transmission battery `B_i(a_i)` per device.
    pub battery_after_tx: Vec<f64>,
    pub consumed_pct: f64,
}

#[derive(Debug, Clone)]
struct EnvCore {
    net: Network,
    engine: Engine,
    day_start: SimTime,
}

/// One environment instance. A step is one simulated day.
#[derive(Debug, Clone, Default)]
pub struct Env {
    core: Option<EnvCore>,
    pub params: EnvParams,
    trace: Option<String>,
}

impl Env {
    /// Wraps a built network. The engine restarts at zero with every device
    /// settled there.
    pub fn new(mut net: Network, params: EnvParams) -> Self {
        let engine = Engine::from_specs(net.overlay.underlay());
        for d in 0..net.devices.len() {
            let b = net.devices[d].battery_pct;
            let last = net.transmitted[d].then_some(net.devices[d].last_tx);
            net.reset_device(d, b, last, SimTime::ZERO);
        }
        Env {
            core: Some(EnvCore {
                net,
                engine,
                day_start: SimTime::ZERO,
            }),
            params,
            trace: None,
        }
    }

    /// Records every delivered message from now on, across timeline resets.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(String::new);
        if let Some(c) = self.core.as_mut() {
            c.engine.enable_trace();
        }
    }

    pub fn take_trace(&mut self) -> Option<String> {
        let mut buf = self.trace.as_mut().map(std::mem::take)?;
        if let Some(t) = self.core.as_mut().and_then(|c| c.engine.take_trace()) {
            buf.push_str(&t);
        }
        Some(buf)
    }

    fn core(&self) -> Result<&EnvCore> {
        self.core.as_ref().ok_or(Error::Uninitialized)
    }

    fn core_mut(&mut self) -> Result<&mut EnvCore> {
        self.core.as_mut().ok_or(Error::Uninitialized)
    }

    pub fn network(&self) -> Result<&Network> {
        Ok(&self.core()?.net)
    }

    pub fn n_devices(&self) -> usize {
        self.core.as_ref().map_or(0, |c| c.net.devices.len())
    }

    pub fn day_start(&self) -> Result<SimTime> {
        Ok(self.core()?.day_start)
    }

    pub fn set_rest_state(&mut self, rest: DeviceState) -> Result<()> {
        let c = self.core_mut()?;
        let now = c.engine.clock();
        for d in 0..c.net.devices.len() {
            c.net.set_rest_state(d, rest, now);
        }
        Ok(())
    }

    /// Gateways broadcast their clocks within their domains; delivered during the next day.
    pub fn sync_clocks(&mut self) -> Result<()> {
        let c = self.core_mut()?;
        c.net.sync_clocks(&mut c.engine)
    }

    /// Battery percentage consumed since the last reset, summed over devices.
    pub fn consumed_pct(&self) -> Result<f64> {
        Ok(energy::total_consumption(&self.core()?.net.ledger))
    }

    pub fn conservation_error(&self) -> Result<f64> {
        let net = &self.core()?.net;
        Ok(net.ledger.conservation_error(&net.devices))
    }

    /// Sets every device's payload size.
    pub fn set_payloads(&mut self, bytes: &[u64]) -> Result<()> {
        let c = self.core_mut()?;
        if bytes.len() != c.net.devices.len() {
            return Err(Error::Shape {
                expected: c.net.devices.len(),
                got: bytes.len(),
            });
        }
        for (d, b) in c.net.devices.iter_mut().zip(bytes) {
            d.payload_bytes = *b;
        }
        Ok(())
    }

    /// Current twin view of the devices.
    pub fn observe(&self) -> Result<StateVector> {
        let c = self.core()?;
        let prev_start = c.day_start.0.saturating_sub(crate::model::MS_PER_DAY);
        let last_tx_min = c
            .net
            .devices
            .iter()
            .zip(&c.net.transmitted)
            .map(|(d, tx)| {
                if *tx {
                    (d.last_tx.0.saturating_sub(prev_start) as f64 / MS_PER_MINUTE as f64)
                        .clamp(0.0, MINUTES_PER_DAY)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(StateVector {
            batteries: c.net.devices.iter().map(|d| d.battery_pct).collect(),
            last_tx_min,
        })
    }

    /// Starts a fresh timeline at the beginning of day 1 with the devices in `state`;
    /// `state.last_tx_min` is read as a minute of day 0.
    pub fn load_state(&mut self, state: &StateVector) -> Result<()> {
        let c = self.core.as_mut().ok_or(Error::Uninitialized)?;
        let n = c.net.devices.len();
        if state.batteries.len() != n || state.last_tx_min.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: state.batteries.len(),
            });
        }
        let mut engine = Engine::from_specs(c.net.overlay.underlay());
        if let Some(buf) = self.trace.as_mut() {
            engine.enable_trace();
            if let Some(t) = c.engine.take_trace() {
                buf.push_str(&t);
            }
        }
        let day_start = SimTime(crate::model::MS_PER_DAY);
        engine.run_until(day_start, &mut crate::netsim::NullWorld)?;
        for d in 0..n {
            let last = minutes_to_simtime(state.last_tx_min[d].clamp(0.0, MINUTES_PER_DAY))?;
            c.net
                .reset_device(d, state.batteries[d], Some(last), day_start);
        }
        c.engine = engine;
        c.day_start = day_start;
        Ok(())
    }

    /// Simulates one day in which device `i` transmits at each minute of `sends[i]`
    /// (minutes past day start, may exceed 1440). Returns the day's latency samples.
    pub fn run_day(&mut self, sends: &[Vec<f64>]) -> Result<Vec<LatencySample>> {
        let c = self.core_mut()?;
        let n = c.net.devices.len();
        if sends.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: sends.len(),
            });
        }
        let day_start = c.day_start;
        c.net.settle_all(day_start);
        let mut last_ms = crate::model::MS_PER_DAY;
        for (i, minutes) in sends.iter().enumerate() {
            for m in minutes {
                let off = minutes_to_simtime(*m)?.0;
                last_ms = last_ms.max(off);
                c.engine
                    .schedule(day_start + off, EventKind::DeviceWake(i))?;
            }
        }
        let day_end = day_start + last_ms;
        c.engine.run_until(day_end, &mut c.net)?;
        c.engine.run_to_quiescence(SimTime(u64::MAX), &mut c.net)?;
        let end = c.engine.clock().max(day_end);
        c.net.settle_all(end);
        let next = (day_start + crate::model::MS_PER_DAY).max(end);
        c.engine.run_until(next, &mut c.net)?;
        c.day_start = next;
        Ok(c.engine.take_samples())
    }

    /// One episode: clamp, apply the interval constraint against each device's
    /// previous transmission, simulate the day, and score it.
    pub fn step(&mut self, action: &ActionVector) -> Result<StepOutcome> {
        let params = self.params;
        let c = self.core_mut()?;
        let n = c.net.devices.len();
        if action.0.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: action.0.len(),
            });
        }
        let a = action.clamped();
        let day_start = c.day_start;
        c.net.settle_all(day_start);
        let last_rel: Vec<f64> = (0..n)
            .map(|i| {
                if c.net.transmitted[i] {
                    (c.net.devices[i].last_tx.0 as f64 - day_start.0 as f64) / MS_PER_MINUTE as f64
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let a_prime = enforce_min_interval(&a.0, &last_rel, &params.constraint);
        let mut battery_after = Vec::with_capacity(n);
        for (i, m) in a_prime.iter().enumerate() {
            let elapsed = minutes_to_simtime(*m)?.0;
            battery_after.push(energy::battery_at(
                &c.net.devices[i],
                elapsed,
                &c.net.model,
                c.net.rest_state[i],
            ));
        }
        let before = energy::total_consumption(&c.net.ledger);
        let sends: Vec<Vec<f64>> = a_prime.iter().map(|m| vec![*m]).collect();
        let samples = self.run_day(&sends)?;
        let c = self.core()?;
        let consumed_pct = energy::total_consumption(&c.net.ledger) - before;

        let mut delays = vec![0.0f64; n];
        for s in samples.iter().filter(|s| s.phase == Phase::DataExchange) {
            if let Some(d) = s.device {
                delays[d] = delays[d].max(s.d_ms);
            }
        }
        let reward = reward_total(
            reward_energy(&battery_after),
            reward_timeliness(&delays, params.d_threshold_ms),
            reward_consecutive(&a.0, &a_prime, &params.constraint, params.lambda),
            params.d_threshold_ms,
            params.lambda,
        );
        Ok(StepOutcome {
            s_next: self.observe()?,
            reward,
            samples,
            tx_minutes: a_prime,
            delays_ms: delays,
            battery_after_tx: battery_after,
            consumed_pct,
        })
    }
}
