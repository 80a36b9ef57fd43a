use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::mlp::{soft_update, Mlp, OutputActivation, Sgdm};
use crate::error::{Error, Result};
use crate::model::MINUTES_PER_DAY;
use crate::scheduler::{whatif_generate, ActionVector, Env, StateVector, Transition, WhatIfRanges};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Exploration {
    EpsilonGreedy,
    /// Additive zero-mean noise in minutes on top of the actor output.
    Gaussian {
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    /// Multiplier applied to rewards before they enter the critic targets.
    pub reward_scale: f64,
    /// Global gradient norm limit per update.
    pub grad_clip: Option<f64>,
    pub exploration: Exploration,
    /// Extra what-if states simulated per episode.
    pub whatif_per_episode: usize,
    pub updates_per_step: usize,
    /// Weight of the penalty on squared actor output pre-activations.
    pub actor_preact_reg: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.01,
            momentum: 0.9,
            gamma: 0.8,
            batch_size: 256,
            epsilon_start: 0.9,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            tau: 0.01,
            buffer_capacity: 100_000,
            hidden: vec![64, 64],
            reward_scale: 0.01,
            grad_clip: Some(5.0),
            exploration: Exploration::EpsilonGreedy,
            whatif_per_episode: 3,
            updates_per_step: 1,
            actor_preact_reg: 1e-3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(0.001..=0.2).contains(&self.learning_rate) {
            return bad("learning_rate must lie in [0.001, 0.2]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("need 1 <= batch_size <= buffer_capacity");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return bad("epsilon_decay_fraction must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("grad_clip must be positive");
        }
        if let Exploration::Gaussian { sigma } = self.exploration {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("gaussian sigma must be >= 0");
            }
        }
        if !(self.actor_preact_reg >= 0.0 && self.actor_preact_reg.is_finite()) {
            return bad("actor_preact_reg must be >= 0");
        }
        if self.updates_per_step == 0 {
            return bad("updates_per_step must be >= 1");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of `episodes`, then flat.
    pub fn epsilon_at(&self, episode: usize, episodes: usize) -> f64 {
        let span = self.epsilon_decay_fraction * episodes as f64;
        if span <= 0.0 {
            return self.epsilon_end;
        }
        let f = (episode as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

pub fn critic_input(state_norm: &[f64], action: &[f64]) -> Vec<f64> {
    state_norm
        .iter()
        .copied()
        .chain(action.iter().map(|a| a / MINUTES_PER_DAY))
        .collect()
}

/// Mean squared error over the batch.
pub fn mse_loss(y: &[f64], q: &[f64]) -> f64 {
    assert_eq!(y.len(), q.len());
    if y.is_empty() {
        return 0.0;
    }
    y.iter().zip(q).map(|(y, q)| (y - q) * (y - q)).sum::<f64>() / y.len() as f64
}

/// Loss and parameter gradient of the critic over `(input, target)` pairs.
pub fn critic_loss_grad(critic: &Mlp, batch: &[(Vec<f64>, f64)]) -> Result<(f64, Mlp)> {
    let mut grads = critic.zeros_like();
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (x, y) in batch {
        let (q, tape) = critic.forward_tape(x)?;
        let err = q[0] - y;
        loss += err * err / b;
        critic.backward(&tape, &[2.0 * err / b], &mut grads);
    }
    Ok((loss, grads))
}

/// Mean of `Q(s, actor(s))` over normalized states and its gradient with
/// respect to the actor parameters.
pub fn actor_objective_grad(actor: &Mlp, critic: &Mlp, states: &[Vec<f64>]) -> Result<(f64, Mlp)> {
    actor_objective_grad_reg(actor, critic, states, 0.0)
}

/// As [`actor_objective_grad`], minus `reg` times the mean squared output
/// pre-activation, which keeps the squashing away from saturation.
pub fn actor_objective_grad_reg(
    actor: &Mlp,
    critic: &Mlp,
    states: &[Vec<f64>],
    reg: f64,
) -> Result<(f64, Mlp)> {
    let mut grads = actor.zeros_like();
    let mut scratch = critic.zeros_like();
    let b = states.len() as f64;
    let mut objective = 0.0;
    let n = actor.out_dim();
    for s in states {
        let (a, a_tape) = actor.forward_tape(s)?;
        let x = critic_input(s, &a);
        let (q, q_tape) = critic.forward_tape(&x)?;
        objective += q[0] / b;
        let dx = critic.backward(&q_tape, &[1.0 / b], &mut scratch);
        let da: Vec<f64> = dx[dx.len() - n..]
            .iter()
            .map(|g| g / MINUTES_PER_DAY)
            .collect();
        if reg == 0.0 {
            actor.backward(&a_tape, &da, &mut grads);
            continue;
        }
        let z = Mlp::output_pre(&a_tape);
        let k = reg / (b * n as f64);
        objective -= k * z.iter().map(|v| v * v).sum::<f64>();
        let mut dz = vec![0.0; n];
        let scale = match actor.output {
            OutputActivation::ScaledTanh { scale } => scale,
            OutputActivation::Linear => 0.0,
        };
        for i in 0..n {
            let slope = if scale == 0.0 {
                1.0
            } else {
                0.5 * scale * (1.0 - z[i].tanh().powi(2))
            };
            dz[i] = da[i] * slope - 2.0 * k * z[i];
        }
        actor.backward_pre(&a_tape, dz, &mut grads);
    }
    Ok((objective, grads))
}

fn clip(grads: &mut Mlp, limit: Option<f64>) {
    if let Some(c) = limit {
        let n = grads.norm();
        if n > c {
            grads.scale(c / n);
        }
    }
}

/// With probability `epsilon` a uniform vector on `[0, 1440]^N`, otherwise the actor output.
pub fn select_action<R: Rng>(
    actor: &Mlp,
    state: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<ActionVector> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Validation(format!(
            "epsilon {epsilon} outside [0,1]"
        )));
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(ActionVector(
            (0..actor.out_dim())
                .map(|_| rng.gen_range(0.0..=MINUTES_PER_DAY))
                .collect(),
        ));
    }
    Ok(ActionVector(actor.forward(&state.normalized())?))
}

pub fn select_action_gaussian<R: Rng>(
    actor: &Mlp,
    state: &StateVector,
    sigma: f64,
    rng: &mut R,
) -> Result<ActionVector> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let a = actor.forward(&state.normalized())?;
    Ok(ActionVector(
        a.into_iter()
            .map(|v| (v + noise.sample(rng)).clamp(0.0, MINUTES_PER_DAY))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub hp: Hyperparams,
    pub n_devices: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: Sgdm,
    pub critic_opt: Sgdm,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(n_devices: usize, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_devices == 0 {
            return Err(Error::Validation("need at least one device".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![2 * n_devices];
        dims.extend(&hp.hidden);
        dims.push(n_devices);
        let actor = Mlp::new(
            &dims,
            OutputActivation::ScaledTanh {
                scale: MINUTES_PER_DAY,
            },
            3e-3,
            &mut rng,
        );
        dims[0] = 3 * n_devices;
        *dims.last_mut().expect("dims") = 1;
        let critic = Mlp::new(&dims, OutputActivation::Linear, 3e-3, &mut rng);
        Ok(Agent {
            actor_opt: Sgdm::new(&actor, hp.learning_rate, hp.momentum),
            critic_opt: Sgdm::new(&critic, hp.learning_rate, hp.momentum),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            buffer: ReplayBuffer::new(hp.buffer_capacity)?,
            actor,
            critic,
            hp,
            n_devices,
            rng,
        })
    }

    pub fn act(&self, state: &StateVector) -> Result<ActionVector> {
        Ok(ActionVector(self.actor.forward(&state.normalized())?))
    }

    pub fn explore(&mut self, state: &StateVector, epsilon: f64) -> Result<ActionVector> {
        match self.hp.exploration {
            Exploration::EpsilonGreedy => select_action(&self.actor, state, epsilon, &mut self.rng),
            Exploration::Gaussian { sigma } => {
                select_action_gaussian(&self.actor, state, sigma, &mut self.rng)
            }
        }
    }

    pub fn q(&self, state: &StateVector, action: &ActionVector) -> Result<f64> {
        Ok(self
            .critic
            .forward(&critic_input(&state.normalized(), &action.0))?[0])
    }

    fn sample_batch(&mut self) -> Result<Vec<Transition>> {
        let b = self.hp.batch_size;
        Ok(self
            .buffer
            .sample(b, &mut self.rng)?
            .into_iter()
            .cloned()
            .collect())
    }

    /// One critic step on `y = scale * r + gamma * Q'(s', actor'(s'))`, with `y = scale * r` at terminals.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let mut pairs = Vec::with_capacity(batch.len());
        for t in batch {
            let mut y = self.hp.reward_scale * t.r;
            if !t.done {
                let s2 = t.s_next.normalized();
                let a2 = self.actor_target.forward(&s2)?;
                y += self.hp.gamma * self.critic_target.forward(&critic_input(&s2, &a2))?[0];
            }
            pairs.push((critic_input(&t.s.normalized(), &t.a.0), y));
        }
        let (loss, mut grads) = critic_loss_grad(&self.critic, &pairs)?;
        clip(&mut grads, self.hp.grad_clip);
        self.critic_opt.step(&mut self.critic, &grads);
        Ok(loss)
    }

    /// One ascent step on the mean critic value of the actor's actions.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<f64> {
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.s.normalized()).collect();
        let (objective, mut grads) =
            actor_objective_grad_reg(&self.actor, &self.critic, &states, self.hp.actor_preact_reg)?;
        grads.scale(-1.0);
        clip(&mut grads, self.hp.grad_clip);
        self.actor_opt.step(&mut self.actor, &grads);
        Ok(objective)
    }

    pub fn soft_update_targets(&mut self) {
        soft_update(&self.actor, &mut self.actor_target, self.hp.tau);
        soft_update(&self.critic, &mut self.critic_target, self.hp.tau);
    }

    /// Critic, actor and target updates on one sampled batch.
    pub fn learn(&mut self) -> Result<f64> {
        let batch = self.sample_batch()?;
        let loss = self.critic_update(&batch)?;
        self.actor_update(&batch)?;
        self.soft_update_targets();
        if !(self.actor.is_finite() && self.critic.is_finite()) {
            return Err(Error::Validation(
                "non-finite parameters after update".into(),
            ));
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub r_total: f64,
    pub r_energy: f64,
    pub r_timeliness: f64,
    pub r_consecutive: f64,
    pub epsilon: f64,
    /// Mean critic loss over the episode's updates.
    pub critic_loss: Option<f64>,
}

pub const CURVE_HEADER: &str =
    "episode,r_total,r_energy,r_timeliness,r_consecutive,epsilon,critic_loss";

pub fn curve_csv(curve: &[EpisodeRecord]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in curve {
        let loss = r.critic_loss.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode, r.r_total, r.r_energy, r.r_timeliness, r.r_consecutive, r.epsilon, loss
        ));
    }
    out
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub completed: usize,
    pub ranges: WhatIfRanges,
    pub agent: Agent,
    pub curve: Vec<EpisodeRecord>,
    #[serde(skip)]
    starts: Option<Vec<StateVector>>,
}

impl Trainer {
    pub fn new(
        n_devices: usize,
        hp: Hyperparams,
        episodes: usize,
        seed: u64,
        ranges: WhatIfRanges,
    ) -> Result<Self> {
        ranges.validate()?;
        Ok(Trainer {
            version: CHECKPOINT_VERSION,
            seed,
            episodes,
            completed: 0,
            ranges,
            agent: Agent::new(n_devices, hp, seed)?,
            curve: Vec::new(),
            starts: None,
        })
    }

    pub fn is_done(&self) -> bool {
        self.completed >= self.episodes
    }

    fn start_state(&mut self, k: usize) -> Result<StateVector> {
        if self.starts.is_none() {
            let per = 1 + self.agent.hp.whatif_per_episode;
            let n = (self.episodes * per).max(1);
            self.starts = Some(whatif_generate(
                self.seed,
                n,
                self.agent.n_devices,
                &self.ranges,
            )?);
        }
        Ok(self.starts.as_ref().expect("generated")[k].clone())
    }

    /// Runs the next episode: one day from a what-if start state, plus the
    /// configured number of extra what-if days, each stored as a transition.
    pub fn run_episode(&mut self, env: &mut Env) -> Result<&EpisodeRecord> {
        if self.is_done() {
            return Err(Error::Validation("all episodes completed".into()));
        }
        if env.n_devices() != self.agent.n_devices {
            return Err(Error::Shape {
                expected: self.agent.n_devices,
                got: env.n_devices(),
            });
        }
        let ep = self.completed;
        let epsilon = self.agent.hp.epsilon_at(ep, self.episodes);
        let per = 1 + self.agent.hp.whatif_per_episode;
        let mut losses = Vec::new();
        let mut primary = None;
        for j in 0..per {
            let start = self.start_state(ep * per + j)?;
            env.load_state(&start)?;
            let s = env.observe()?;
            let a = self.agent.explore(&s, epsilon)?.clamped();
            let out = env.step(&a)?;
            if j == 0 {
                primary = Some(out.reward);
            }
            self.agent.buffer.push(Transition {
                s,
                a,
                r: out.reward.r_total,
                s_next: out.s_next,
                done: true,
            });
            if self.agent.buffer.len() >= self.agent.hp.batch_size {
                for _ in 0..self.agent.hp.updates_per_step {
                    losses.push(self.agent.learn()?);
                }
            }
        }
        let r = primary.expect("at least one step");
        self.curve.push(EpisodeRecord {
            episode: ep,
            r_total: r.r_total,
            r_energy: r.r_energy,
            r_timeliness: r.r_timeliness,
            r_consecutive: r.r_consecutive,
            epsilon,
            critic_loss: (!losses.is_empty())
                .then(|| losses.iter().sum::<f64>() / losses.len() as f64),
        });
        self.completed += 1;
        Ok(self.curve.last().expect("pushed"))
    }

    pub fn run(&mut self, env: &mut Env) -> Result<()> {
        while !self.is_done() {
            self.run_episode(env)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Trainer = serde_json::from_str(text)?;
        if t.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                t.version
            )));
        }
        t.agent.hp.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains a fresh agent for `episodes` episodes.
pub fn train(env: &mut Env, hp: Hyperparams, episodes: usize, seed: u64) -> Result<Trainer> {
    let mut t = Trainer::new(env.n_devices(), hp, episodes, seed, WhatIfRanges::default())?;
    t.run(env)?;
    Ok(t)
}
