use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::ddpg::{Agent, Trainer};
use crate::error::Result;
use crate::model::{DeviceState, MINUTES_PER_DAY};
use crate::netsim::LatencySample;
use crate::scheduler::{ActionVector, Env, RewardBreakdown, ScheduleConstraint, StateVector};

/// Reference schedulers the learned policy is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselinePolicy {
    /// Every device sends at the same minute and idles in between.
    PeriodicSynchronized { minute: f64 },
    /// Every device sends at an independent uniform minute and sleeps in between.
    UniformRandom,
    /// Devices never sleep and send every `interval_minutes`.
    AlwaysActive { interval_minutes: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Ddpg,
    PeriodicSynchronized,
    UniformRandom,
    AlwaysActive,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ddpg => "ddpg",
            PolicyKind::PeriodicSynchronized => "periodic_synchronized",
            PolicyKind::UniformRandom => "uniform_random",
            PolicyKind::AlwaysActive => "always_active",
        }
    }

    pub fn baseline(self, cfg: &ExperimentConfig) -> Option<BaselinePolicy> {
        match self {
            PolicyKind::Ddpg => None,
            PolicyKind::PeriodicSynchronized => Some(BaselinePolicy::PeriodicSynchronized {
                minute: cfg.periodic_minute,
            }),
            PolicyKind::UniformRandom => Some(BaselinePolicy::UniformRandom),
            PolicyKind::AlwaysActive => Some(BaselinePolicy::AlwaysActive {
                interval_minutes: cfg.always_active_interval_minutes,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Learned(&'a Agent),
    Baseline(BaselinePolicy),
}

impl Policy<'_> {
    pub fn rest_state(&self) -> DeviceState {
        match self {
            Policy::Learned(_) => DeviceState::Sleep,
            Policy::Baseline(BaselinePolicy::PeriodicSynchronized { .. }) => DeviceState::Idle,
            Policy::Baseline(BaselinePolicy::UniformRandom) => DeviceState::Sleep,
            Policy::Baseline(BaselinePolicy::AlwaysActive { .. }) => DeviceState::Active,
        }
    }

    /// First transmission minute of each device for the day.
    pub fn action<R: Rng>(&self, state: &StateVector, rng: &mut R) -> Result<ActionVector> {
        let n = state.len();
        Ok(match self {
            Policy::Learned(agent) => agent.act(state)?,
            Policy::Baseline(BaselinePolicy::PeriodicSynchronized { minute }) => {
                ActionVector(vec![*minute; n])
            }
            Policy::Baseline(BaselinePolicy::UniformRandom) => ActionVector(
                (0..n)
                    .map(|_| rng.gen_range(0.0..=MINUTES_PER_DAY))
                    .collect(),
            ),
            Policy::Baseline(BaselinePolicy::AlwaysActive { .. }) => ActionVector(vec![0.0; n]),
        })
    }

    /// All transmission minutes of the day, `None` for single-send policies.
    pub fn multi_sends(&self, n: usize) -> Option<Vec<Vec<f64>>> {
        match self {
            Policy::Baseline(BaselinePolicy::AlwaysActive { interval_minutes }) => {
                let count = (MINUTES_PER_DAY / interval_minutes).ceil() as usize;
                let day: Vec<f64> = (0..count)
                    .map(|k| k as f64 * interval_minutes)
                    .filter(|m| *m < MINUTES_PER_DAY)
                    .collect();
                Some(vec![day; n])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DayResult {
    pub consumed_pct: f64,
    pub samples: Vec<LatencySample>,
    /// Scored days only; multi-send days have no single action to score.
    pub reward: Option<RewardBreakdown>,
}

/// Runs one day of `policy` from the environment's current state.
pub fn run_policy_day<R: Rng>(env: &mut Env, policy: &Policy, rng: &mut R) -> Result<DayResult> {
    if let Some(sends) = policy.multi_sends(env.n_devices()) {
        let before = env.consumed_pct()?;
        let samples = env.run_day(&sends)?;
        return Ok(DayResult {
            consumed_pct: env.consumed_pct()? - before,
            samples,
            reward: None,
        });
    }
    let s = env.observe()?;
    let a = policy.action(&s, rng)?;
    let out = env.step(&a)?;
    Ok(DayResult {
        consumed_pct: out.consumed_pct,
        samples: out.samples,
        reward: Some(out.reward),
    })
}

/// Loads `start`, applies the policy's rest state and runs `days` chained days.
pub fn evaluate<R: Rng>(
    env: &mut Env,
    policy: &Policy,
    start: &StateVector,
    days: usize,
    rng: &mut R,
) -> Result<Vec<DayResult>> {
    env.load_state(start)?;
    env.set_rest_state(policy.rest_state())?;
    (0..days)
        .map(|_| run_policy_day(env, policy, rng))
        .collect()
}

/// Trains an agent on `env` for `cfg.episodes` episodes, following the
/// configured interval schedule.
pub fn train_agent(cfg: &ExperimentConfig, env: &mut Env, seed: u64) -> Result<Trainer> {
    let mut t = Trainer::new(
        env.n_devices(),
        cfg.ddpg.clone(),
        cfg.episodes,
        seed,
        cfg.whatif,
    )?;
    continue_training(cfg, env, &mut t)?;
    Ok(t)
}

pub fn continue_training(cfg: &ExperimentConfig, env: &mut Env, t: &mut Trainer) -> Result<()> {
    while !t.is_done() {
        train_episode(cfg, env, t)?;
    }
    Ok(())
}

/// One training episode under the interval constraint scheduled for it.
pub fn train_episode(cfg: &ExperimentConfig, env: &mut Env, t: &mut Trainer) -> Result<()> {
    env.set_rest_state(DeviceState::Sleep)?;
    env.params.constraint = ScheduleConstraint::new(cfg.dt_min_at(t.completed, t.episodes))?;
    let out = t.run_episode(env).map(|_| ());
    env.params.constraint = ScheduleConstraint::new(cfg.dt_min_minutes)?;
    out
}

pub fn full_state(n: usize, battery_pct: f64) -> StateVector {
    StateVector {
        batteries: vec![battery_pct; n],
        last_tx_min: vec![0.0; n],
    }
}
