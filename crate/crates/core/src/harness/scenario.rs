use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::model::{make_device, DeviceState, DomainId, SimTime};
use crate::netsim::{Engine, Stats};
use crate::overlay::OverlayGraph;
use crate::scheduler::{Env, EnvParams, ScheduleConstraint};
use crate::sim::Network;

pub fn domains(kind: ScenarioKind) -> &'static [DomainId] {
    match kind {
        ScenarioKind::OneService => &DomainId::SERVICES[..1],
        ScenarioKind::ThreeService => &DomainId::SERVICES,
    }
}

/// Even split of publishers over the scenario's domains; the remainder goes
/// to the lowest domain ids.
pub fn split_publishers(kind: ScenarioKind, n: usize) -> Vec<(DomainId, usize)> {
    let ds = domains(kind);
    let (base, rem) = (n / ds.len(), n % ds.len());
    ds.iter()
        .enumerate()
        .map(|(i, d)| (*d, base + usize::from(i < rem)))
        .collect()
}

/// A built network, already through discovery.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub split: Vec<(DomainId, usize)>,
    pub env: Env,
    /// Announcement rounds until every view knew its whole domain.
    pub discovery_rounds: usize,
    pub discovery_stats: Stats,
    pub discovery_trace: Option<String>,
}

impl Scenario {
    /// Devices of `domain`, by device id.
    pub fn devices_in(&self, domain: DomainId) -> Vec<usize> {
        let mut start = 0;
        for (d, n) in &self.split {
            if *d == domain {
                return (start..start + n).collect();
            }
            start += n;
        }
        Vec::new()
    }
}

/// Participant ids: per domain a gateway, one service application and one
/// twin per publisher, numbered consecutively from 1.
pub fn build_network(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    n_publishers: usize,
    seed: u64,
) -> Result<(Network, Vec<(DomainId, usize)>)> {
    let split = split_publishers(kind, n_publishers);
    let mut net = Network::new(OverlayGraph::new(cfg.overlay.clone(), seed), cfg.battery);
    let mut pid = 1u32;
    let mut next = || {
        pid += 1;
        pid - 1
    };
    let mut device_id = 0;
    for (domain, count) in &split {
        let topic = domain.readings_topic();
        net.add_domain(*domain, next())?;
        net.add_service_app(next(), &topic)?;
        for _ in 0..*count {
            let dev = make_device(
                device_id,
                *domain,
                cfg.initial_battery_pct,
                cfg.payload_bytes,
            )?;
            net.add_device(next(), dev, &topic, DeviceState::Sleep)?;
            device_id += 1;
        }
    }
    Ok((net, split))
}

fn converged(net: &Network) -> bool {
    net.views.values().all(|v| {
        let peers = net.views.values().filter(|o| o.domain == v.domain).count();
        v.known_participants.len() == peers
    })
}

/// Builds the scenario and runs discovery to convergence.
pub fn build_scenario(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    n_publishers: usize,
    seed: u64,
    trace: bool,
) -> Result<Scenario> {
    cfg.validate()?;
    if n_publishers > super::config::MAX_PUBLISHERS {
        return Err(Error::Config(format!(
            "n_publishers: {n_publishers} exceeds the limit"
        )));
    }
    let (mut net, split) = build_network(cfg, kind, n_publishers, seed)?;
    let mut engine = Engine::from_specs(net.overlay.underlay());
    if trace {
        engine.enable_trace();
    }
    let mut rounds = 0;
    while !converged(&net) {
        if rounds == 2 {
            return Err(Error::Validation(
                "discovery did not converge in 2 rounds".into(),
            ));
        }
        net.announce_all(&mut engine)?;
        engine.run_to_quiescence(SimTime(u64::MAX), &mut net)?;
        rounds += 1;
    }
    let discovery_trace = engine.take_trace();
    let discovery_stats = engine.stats().clone();
    let params = EnvParams {
        constraint: ScheduleConstraint::new(cfg.dt_min_minutes)?,
        d_threshold_ms: cfg.d_threshold_ms,
        lambda: cfg.lambda,
    };
    let mut env = Env::new(net, params);
    if trace {
        env.enable_trace();
    }
    Ok(Scenario {
        kind,
        split,
        env,
        discovery_rounds: rounds,
        discovery_stats,
        discovery_trace,
    })
}

/// One synthetic sensor reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub domain: DomainId,
    pub device: usize,
    pub value: f64,
}

/// Seeded per-domain value streams: an air-quality index, a vehicle count
/// and a soil-moisture percentage.
#[derive(Debug, Clone)]
pub struct ReadingGenerator {
    domain: DomainId,
    rng: ChaCha8Rng,
    level: f64,
}

impl ReadingGenerator {
    pub fn new(domain: DomainId, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(domain.0) << 32) ^ 0x7265_6164);
        let (lo, hi) = Self::range(domain);
        let level = rng.gen_range(lo..hi);
        ReadingGenerator { domain, rng, level }
    }

    pub fn range(domain: DomainId) -> (f64, f64) {
        match domain {
            DomainId::AIR_Q => (0.0, 500.0),
            DomainId::TRANSPORT => (0.0, 200.0),
            _ => (0.0, 100.0),
        }
    }

    /// Bounded random walk around the previous value.
    pub fn next(&mut self, device: usize) -> Reading {
        let (lo, hi) = Self::range(self.domain);
        let step = (hi - lo) * 0.05;
        self.level = (self.level + self.rng.gen_range(-step..=step)).clamp(lo, hi);
        Reading {
            domain: self.domain,
            device,
            value: self.level,
        }
    }
}
