//! Shared domain types: simulation time, service domains, devices and topics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MS_PER_MINUTE: u64 = 60_000;
pub const MINUTES_PER_DAY: f64 = 1440.0;
pub const MS_PER_DAY: u64 = 86_400_000;

/// Milliseconds since simulation start.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn as_minutes(self) -> f64 {
        self.0 as f64 / MS_PER_MINUTE as f64
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: u64) -> SimTime {
        SimTime(self.0 + rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// Converts fractional minutes to the engine clock, rounding to the nearest millisecond.
pub fn minutes_to_simtime(minutes: f64) -> Result<SimTime> {
    if minutes.is_nan() || minutes < 0.0 || !minutes.is_finite() {
        return Err(Error::Validation(format!(
            "minutes must be finite and >= 0, got {minutes}"
        )));
    }
    Ok(SimTime((minutes * MS_PER_MINUTE as f64).round() as u64))
}

/// Service domain partition. The three smart-city services use ids 0..=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub u16);

impl DomainId {
    pub const AIR_Q: DomainId = DomainId(0);
    pub const TRANSPORT: DomainId = DomainId(1);
    pub const SMART_FARM: DomainId = DomainId(2);

    pub const SERVICES: [DomainId; 3] = [Self::AIR_Q, Self::TRANSPORT, Self::SMART_FARM];

    pub fn name(self) -> String {
        match self.0 {
            0 => "AIR_Q_DOMAIN".to_string(),
            1 => "TRANSPORT_DOMAIN".to_string(),
            2 => "SMART_FARM_DOMAIN".to_string(),
            n => format!("DOMAIN_{n}"),
        }
    }

    /// Topic carrying the domain's sensor readings.
    pub fn readings_topic(self) -> Topic {
        let name = match self.0 {
            0 => "air_quality/readings".to_string(),
            1 => "transport/readings".to_string(),
            2 => "smart_farm/readings".to_string(),
            n => format!("domain_{n}/readings"),
        };
        Topic { name, domain: self }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceState {
    Idle,
    Active,
    Sleep,
}

/// A physical publisher. Ids are dense (0..N) so they index state and action vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: usize,
    pub domain: DomainId,
    pub battery_pct: f64,
    pub state: DeviceState,
    pub last_tx: SimTime,
    pub payload_bytes: u64,
}

pub fn make_device(
    id: usize,
    domain: DomainId,
    battery_pct: f64,
    payload_bytes: u64,
) -> Result<Device> {
    if !(0.0..=100.0).contains(&battery_pct) {
        return Err(Error::Validation(format!(
            "battery_pct {battery_pct} outside [0,100]"
        )));
    }
    if payload_bytes == 0 {
        return Err(Error::Validation("payload_bytes must be >= 1".into()));
    }
    Ok(Device {
        id,
        domain,
        battery_pct,
        state: DeviceState::Idle,
        last_tx: SimTime::ZERO,
        payload_bytes,
    })
}

impl Device {
    pub fn is_dead(&self) -> bool {
        self.battery_pct <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub domain: DomainId,
}

impl Topic {
    pub fn new(name: impl Into<String>, domain: DomainId) -> Self {
        Topic {
            name: name.into(),
            domain,
        }
    }
}
