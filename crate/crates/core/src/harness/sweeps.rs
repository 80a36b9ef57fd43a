use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioKind};
use super::policy::{evaluate, full_state, run_policy_day, train_agent, Policy, PolicyKind};
use super::scenario::{build_network, build_scenario, Scenario};
use super::stats::Summary;
use crate::ddpg::Agent;
use crate::error::{Error, Result};
use crate::model::SimTime;
use crate::netsim::{percentile, Engine};
use crate::rtps::Phase;
use crate::scheduler::{Env, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    DiscoveryOnly,
    DataExchange,
}

impl RunMode {
    pub fn for_volume(volume: u64, cutover: u64) -> RunMode {
        if volume < cutover {
            RunMode::DiscoveryOnly
        } else {
            RunMode::DataExchange
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub p95_ms: f64,
    pub samples: usize,
    pub conservation_error: f64,
}

/// Cap on announcement rounds of a discovery-only point.
const MAX_DISCOVERY_ROUNDS: usize = 100_000;

/// Repeats discovery announcements, one round per heartbeat period, until
/// every domain has carried `volume` bytes; reports the p95 of those messages.
pub fn discovery_point(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    volume: u64,
    seed: u64,
) -> Result<LatencyPoint> {
    if volume == 0 {
        return Err(Error::EmptySamples);
    }
    let (mut net, split) = build_network(cfg, kind, cfg.n_publishers, seed)?;
    let mut engine = Engine::from_specs(net.overlay.underlay());
    let period = net.heartbeat_period_ms;
    for _ in 0..MAX_DISCOVERY_ROUNDS {
        net.announce_all(&mut engine)?;
        engine.run_to_quiescence(SimTime(u64::MAX), &mut net)?;
        let bytes = &engine.stats().bytes_by_domain;
        if split
            .iter()
            .all(|(d, _)| bytes.get(d).copied().unwrap_or(0) >= volume)
        {
            break;
        }
        let next = engine.clock() + period;
        engine.run_until(next, &mut net)?;
    }
    let xs = engine.stats().phase_latencies(Phase::Discovery);
    Ok(LatencyPoint {
        p95_ms: percentile(&xs, 95.0)?,
        samples: xs.len(),
        conservation_error: net.ledger.conservation_error(&net.devices),
    })
}

/// Per-device payload so that each domain publishes `volume` bytes in one round.
pub fn volume_payloads(sc: &Scenario, volume: u64) -> Vec<u64> {
    let mut out = vec![0; sc.env.n_devices()];
    for (d, n) in &sc.split {
        if *n == 0 {
            continue;
        }
        let per = volume.div_ceil(*n as u64).max(1);
        for i in sc.devices_in(*d) {
            out[i] = per;
        }
    }
    out
}

/// One data-exchange day at `volume` bytes per domain, clocks synchronized first.
pub fn data_point(
    sc: &Scenario,
    volume: u64,
    policy: &Policy,
    cfg: &ExperimentConfig,
    rng_seed: u64,
) -> Result<LatencyPoint> {
    if volume == 0 {
        return Err(Error::EmptySamples);
    }
    let mut env = sc.env.clone();
    env.set_payloads(&volume_payloads(sc, volume))?;
    env.load_state(&full_state(env.n_devices(), cfg.initial_battery_pct))?;
    env.set_rest_state(policy.rest_state())?;
    env.sync_clocks()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let day = run_policy_day(&mut env, policy, &mut rng)?;
    let xs: Vec<f64> = day
        .samples
        .iter()
        .filter(|s| s.phase == Phase::DataExchange)
        .map(|s| s.d_ms)
        .collect();
    Ok(LatencyPoint {
        p95_ms: percentile(&xs, 95.0)?,
        samples: xs.len(),
        conservation_error: env.conservation_error()?,
    })
}

/// Agent trained on the scenario with the sweep's largest payloads.
pub fn train_for_latency(cfg: &ExperimentConfig, sc: &Scenario, seed: u64) -> Result<Agent> {
    let mut env = sc.env.clone();
    let max = cfg
        .volume_points
        .last()
        .copied()
        .unwrap_or(cfg.payload_bytes);
    env.set_payloads(&volume_payloads(sc, max))?;
    Ok(train_agent(cfg, &mut env, seed)?.agent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub scenario: ScenarioKind,
    /// `discovery` rows carry no schedule.
    pub policy: String,
    pub volume_bytes: u64,
    pub phase: RunMode,
    pub p95: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
    pub max_conservation_error: f64,
}

pub const LATENCY_HEADER: &str =
    "scenario,policy,volume_bytes,phase,seeds,p95_mean_ms,p95_min_ms,p95_max_ms,p95_ci95_ms";

impl LatencyTable {
    pub fn csv(&self) -> String {
        let mut out = format!("{LATENCY_HEADER}\n");
        for r in &self.rows {
            let phase = match r.phase {
                RunMode::DiscoveryOnly => "discovery",
                RunMode::DataExchange => "data",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.scenario.name(),
                r.policy,
                r.volume_bytes,
                phase,
                r.p95.n,
                r.p95.mean,
                r.p95.min,
                r.p95.max,
                r.p95.ci95
            );
        }
        out
    }

    pub fn find(&self, scenario: ScenarioKind, policy: &str, volume: u64) -> Option<&LatencyRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.policy == policy && r.volume_bytes == volume)
    }
}

pub const LATENCY_POLICIES: [PolicyKind; 3] = [
    PolicyKind::Ddpg,
    PolicyKind::PeriodicSynchronized,
    PolicyKind::UniformRandom,
];

type PointKey = (String, u64, RunMode);

fn latency_seed(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    seed: u64,
) -> Result<Vec<(PointKey, LatencyPoint)>> {
    let data_needed = cfg
        .volume_points
        .iter()
        .any(|v| RunMode::for_volume(*v, cfg.discovery_cutover_bytes) == RunMode::DataExchange);
    let sc = build_scenario(cfg, kind, cfg.n_publishers, seed, false)?;
    let agent = if data_needed && cfg.n_publishers > 0 {
        Some(train_for_latency(cfg, &sc, seed)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &v in &cfg.volume_points {
        match RunMode::for_volume(v, cfg.discovery_cutover_bytes) {
            RunMode::DiscoveryOnly => {
                out.push((
                    ("discovery".to_string(), v, RunMode::DiscoveryOnly),
                    discovery_point(cfg, kind, v, seed)?,
                ));
            }
            RunMode::DataExchange => {
                let Some(agent) = agent.as_ref() else {
                    continue;
                };
                for k in LATENCY_POLICIES {
                    let policy = match k.baseline(cfg) {
                        Some(b) => Policy::Baseline(b),
                        None => Policy::Learned(agent),
                    };
                    let p = data_point(&sc, v, &policy, cfg, seed ^ v)?;
                    out.push(((k.name().to_string(), v, RunMode::DataExchange), p));
                }
            }
        }
    }
    Ok(out)
}

/// Every volume point for both scenarios, seeds in parallel; aggregation is
/// ordered by scenario, point and policy.
pub fn latency_sweep(cfg: &ExperimentConfig) -> Result<LatencyTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in [ScenarioKind::OneService, ScenarioKind::ThreeService] {
        let per_seed: Vec<Vec<(PointKey, LatencyPoint)>> = cfg
            .seeds
            .par_iter()
            .map(|s| latency_seed(cfg, kind, *s))
            .collect::<Result<_>>()?;
        let Some(first) = per_seed.first() else {
            continue;
        };
        for (i, (key, _)) in first.iter().enumerate() {
            let xs: Vec<f64> = per_seed.iter().map(|r| r[i].1.p95_ms).collect();
            worst = per_seed
                .iter()
                .map(|r| r[i].1.conservation_error)
                .fold(worst, f64::max);
            rows.push(LatencyRow {
                scenario: kind,
                policy: key.0.clone(),
                volume_bytes: key.1,
                phase: key.2,
                p95: Summary::of(&xs).expect("at least one seed"),
            });
        }
    }
    Ok(LatencyTable {
        rows,
        max_conservation_error: worst,
    })
}

/// Total battery percentage consumed by `policy` over `days` days.
pub fn energy_run(
    env: &mut Env,
    policy: &Policy,
    cfg: &ExperimentConfig,
    days: usize,
    rng_seed: u64,
) -> Result<(f64, f64)> {
    let n = env.n_devices();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    if cfg.energy_reset_daily {
        let mut state = full_state(n, cfg.initial_battery_pct);
        for _ in 0..days {
            env.load_state(&state)?;
            env.set_rest_state(policy.rest_state())?;
            total += run_policy_day(env, policy, &mut rng)?.consumed_pct;
            worst = worst.max(env.conservation_error()?);
            state = StateVector {
                batteries: vec![cfg.initial_battery_pct; n],
                last_tx_min: env.observe()?.last_tx_min,
            };
        }
    } else {
        let results = evaluate(
            env,
            policy,
            &full_state(n, cfg.initial_battery_pct),
            days,
            &mut rng,
        )?;
        total = results.iter().map(|d| d.consumed_pct).sum();
        worst = env.conservation_error()?;
    }
    Ok((total, worst))
}

pub const ENERGY_POLICIES: [PolicyKind; 4] = [
    PolicyKind::Ddpg,
    PolicyKind::PeriodicSynchronized,
    PolicyKind::UniformRandom,
    PolicyKind::AlwaysActive,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub n_publishers: usize,
    pub policy: PolicyKind,
    pub consumed_pct: Summary,
    /// Mean consumption over the largest mean at this publisher count.
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub rows: Vec<EnergyRow>,
    pub max_conservation_error: f64,
}

pub const ENERGY_HEADER: &str = "n_publishers,policy,seeds,consumed_mean_pct,consumed_min_pct,consumed_max_pct,consumed_ci95_pct,normalized";

impl EnergyTable {
    pub fn csv(&self) -> String {
        let mut out = format!("{ENERGY_HEADER}\n");
        for r in &self.rows {
            let c = &r.consumed_pct;
            let norm = r.normalized.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.n_publishers,
                r.policy.name(),
                c.n,
                c.mean,
                c.min,
                c.max,
                c.ci95,
                norm
            );
        }
        out
    }

    pub fn find(&self, n_publishers: usize, policy: PolicyKind) -> Option<&EnergyRow> {
        self.rows
            .iter()
            .find(|r| r.n_publishers == n_publishers && r.policy == policy)
    }
}

fn energy_seed(
    cfg: &ExperimentConfig,
    n: usize,
    seed: u64,
    policies: &[PolicyKind],
) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Ok(vec![(0.0, 0.0); policies.len()]);
    }
    let sc = build_scenario(cfg, ScenarioKind::ThreeService, n, seed, false)?;
    let agent = if policies.contains(&PolicyKind::Ddpg) {
        let mut env = sc.env.clone();
        Some(train_agent(cfg, &mut env, seed)?.agent)
    } else {
        None
    };
    policies
        .iter()
        .map(|k| {
            let policy = match (k.baseline(cfg), agent.as_ref()) {
                (Some(b), _) => Policy::Baseline(b),
                (None, Some(a)) => Policy::Learned(a),
                (None, None) => unreachable!("agent trained when requested"),
            };
            let mut env = sc.env.clone();
            energy_run(&mut env, &policy, cfg, cfg.energy_days, seed ^ 0x656e)
        })
        .collect()
}

/// Consumption of each policy at each publisher count in the three-service
/// scenario, normalized per count by the largest mean.
pub fn energy_sweep(cfg: &ExperimentConfig, policies: &[PolicyKind]) -> Result<EnergyTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &n in &cfg.publisher_counts {
        let per_seed: Vec<Vec<(f64, f64)>> = cfg
            .seeds
            .par_iter()
            .map(|s| energy_seed(cfg, n, *s, policies))
            .collect::<Result<_>>()?;
        let summaries: Vec<Summary> = (0..policies.len())
            .map(|i| {
                worst = per_seed.iter().map(|r| r[i].1).fold(worst, f64::max);
                Summary::of(&per_seed.iter().map(|r| r[i].0).collect::<Vec<_>>())
                    .expect("at least one seed")
            })
            .collect();
        let top = summaries.iter().map(|s| s.mean).fold(0.0, f64::max);
        for (k, s) in policies.iter().zip(summaries) {
            rows.push(EnergyRow {
                n_publishers: n,
                policy: *k,
                normalized: (top > 0.0).then(|| s.mean / top),
                consumed_pct: s,
            });
        }
    }
    Ok(EnergyTable {
        rows,
        max_conservation_error: worst,
    })
}

/// Whitespace-separated columns for plotting: one line per x value, one
/// column per series.
pub fn plot_data(x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut xs: Vec<f64> = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = format!("# {x_label}");
    for (name, _) in series {
        let _ = write!(out, " {name}");
    }
    out.push('\n');
    for x in xs {
        let _ = write!(out, "{x}");
        for (_, pts) in series {
            match pts.iter().find(|p| p.0 == x) {
                Some(p) => {
                    let _ = write!(out, " {}", p.1);
                }
                None => out.push_str(" NaN"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn latency_plot_data(t: &LatencyTable, scenario: ScenarioKind) -> String {
    let mut names: Vec<String> = Vec::new();
    for r in t.rows.iter().filter(|r| r.scenario == scenario) {
        if !names.contains(&r.policy) {
            names.push(r.policy.clone());
        }
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = names
        .into_iter()
        .map(|n| {
            let pts = t
                .rows
                .iter()
                .filter(|r| r.scenario == scenario && r.policy == n)
                .map(|r| (r.volume_bytes as f64, r.p95.mean))
                .collect();
            (n, pts)
        })
        .collect();
    plot_data("volume_bytes", &series)
}

pub fn energy_plot_data(t: &EnergyTable) -> String {
    let mut kinds: Vec<PolicyKind> = t.rows.iter().map(|r| r.policy).collect();
    kinds.sort();
    kinds.dedup();
    let series: Vec<(String, Vec<(f64, f64)>)> = kinds
        .into_iter()
        .map(|k| {
            let pts = t
                .rows
                .iter()
                .filter(|r| r.policy == k)
                .filter_map(|r| r.normalized.map(|v| (r.n_publishers as f64, v)))
                .collect();
            (k.name().to_string(), pts)
        })
        .collect();
    plot_data("n_publishers", &series)
}
