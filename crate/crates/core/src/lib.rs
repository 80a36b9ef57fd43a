//! Deterministic simulator of a twin-managed IoT pub/sub network with a DDPG
//! engine that schedules each device's daily transmission.
//!
//! Layers, bottom up: [`model`] types, the [`netsim`] event engine, the
//! [`overlay`] of twin nodes, the [`rtps`] protocol state machines, [`energy`]
//! accounting, the assembled [`sim::Network`], the [`scheduler`] environment,
//! the [`ddpg`] learner and the experiment [`harness`].

pub mod ddpg;
pub mod energy;
pub mod error;
pub mod harness;
pub mod model;
pub mod netsim;
pub mod overlay;
pub mod rtps;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
