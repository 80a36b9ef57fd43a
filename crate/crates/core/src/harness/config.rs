use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddpg::Hyperparams;
use crate::energy::BatteryModel;
use crate::error::{Error, Result};
use crate::model::MINUTES_PER_DAY;
use crate::overlay::OverlayConfig;
use crate::scheduler::WhatIfRanges;

pub const MAX_PUBLISHERS: usize = 600;
pub const MAX_VOLUME_BYTES: u64 = 400_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    OneService,
    ThreeService,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::OneService => "one_service",
            ScenarioKind::ThreeService => "three_service",
        }
    }
}

/// Everything an experiment needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    pub n_publishers: usize,
    /// Payload of one reading in training and energy runs.
    pub payload_bytes: u64,
    pub initial_battery_pct: f64,
    /// Per-service volume points of the latency sweep, ascending.
    pub volume_points: Vec<u64>,
    pub discovery_cutover_bytes: u64,
    pub d_threshold_ms: f64,
    pub lambda: f64,
    pub dt_min_minutes: f64,
    /// When set, the interval constraint moves linearly from `dt_min_minutes`
    /// to this value over the training episodes.
    pub dt_min_final_minutes: Option<f64>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub eval_days: usize,
    pub energy_days: usize,
    /// Restore full batteries at the start of every energy-sweep day.
    pub energy_reset_daily: bool,
    pub publisher_counts: Vec<usize>,
    pub periodic_minute: f64,
    pub always_active_interval_minutes: f64,
    pub overlay: OverlayConfig,
    pub battery: BatteryModel,
    pub ddpg: Hyperparams,
    pub whatif: WhatIfRanges,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioKind::ThreeService,
            n_publishers: 10,
            payload_bytes: 1_000,
            initial_battery_pct: 100.0,
            volume_points: vec![
                100_000,
                1_000_000,
                10_000_000,
                100_000_000,
                200_000_000,
                400_000_000,
            ],
            discovery_cutover_bytes: 200_000_000,
            d_threshold_ms: 180.0,
            lambda: 0.3,
            dt_min_minutes: 30.0,
            dt_min_final_minutes: None,
            seeds: (1..=10).collect(),
            episodes: 300,
            eval_days: 50,
            energy_days: 30,
            energy_reset_daily: true,
            publisher_counts: vec![0, 60, 120, 240, 360, 480, 600],
            periodic_minute: 60.0,
            always_active_interval_minutes: 60.0,
            overlay: OverlayConfig::default(),
            battery: BatteryModel::default(),
            ddpg: Hyperparams::default(),
            whatif: WhatIfRanges::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{name}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_publishers > MAX_PUBLISHERS {
            return Err(field(
                "n_publishers",
                format!("{} exceeds {MAX_PUBLISHERS}", self.n_publishers),
            ));
        }
        if let Some(c) = self.publisher_counts.iter().find(|c| **c > MAX_PUBLISHERS) {
            return Err(field(
                "publisher_counts",
                format!("{c} exceeds {MAX_PUBLISHERS}"),
            ));
        }
        if self.volume_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(field("volume_points", "must be strictly ascending"));
        }
        if let Some(v) = self.volume_points.last() {
            if *v > MAX_VOLUME_BYTES {
                return Err(field(
                    "volume_points",
                    format!("{v} exceeds {MAX_VOLUME_BYTES}"),
                ));
            }
            if self.discovery_cutover_bytes > *v {
                return Err(field(
                    "discovery_cutover_bytes",
                    "must not exceed the largest volume point",
                ));
            }
        }
        if !(self.d_threshold_ms >= 0.0 && self.d_threshold_ms.is_finite()) {
            return Err(field("d_threshold_ms", "must be a finite value >= 0"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(field("lambda", "must be a finite value >= 0"));
        }
        for (name, v) in [
            ("dt_min_minutes", Some(self.dt_min_minutes)),
            ("dt_min_final_minutes", self.dt_min_final_minutes),
        ] {
            if let Some(v) = v {
                if !(0.0..MINUTES_PER_DAY).contains(&v) {
                    return Err(field(name, "must lie in [0, 1440)"));
                }
            }
        }
        if !(0.0..=MINUTES_PER_DAY).contains(&self.periodic_minute) {
            return Err(field("periodic_minute", "must lie in [0, 1440]"));
        }
        if !(self.always_active_interval_minutes > 0.0
            && self.always_active_interval_minutes <= MINUTES_PER_DAY)
        {
            return Err(field(
                "always_active_interval_minutes",
                "must lie in (0, 1440]",
            ));
        }
        if !(0.0..=100.0).contains(&self.initial_battery_pct) {
            return Err(field("initial_battery_pct", "must lie in [0, 100]"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "need at least one seed"));
        }
        self.overlay.validate().map_err(|e| field("overlay", e))?;
        self.battery.validate().map_err(|e| field("battery", e))?;
        self.ddpg.validate().map_err(|e| field("ddpg", e))?;
        self.whatif.validate().map_err(|e| field("whatif", e))?;
        Ok(())
    }

    /// Interval constraint used during `episode` of `episodes`.
    pub fn dt_min_at(&self, episode: usize, episodes: usize) -> f64 {
        match self.dt_min_final_minutes {
            None => self.dt_min_minutes,
            Some(end) => {
                let f = if episodes <= 1 {
                    0.0
                } else {
                    episode as f64 / (episodes - 1) as f64
                };
                self.dt_min_minutes + (end - self.dt_min_minutes) * f
            }
        }
    }
}
