//! Actor-critic scheduling agent.

mod agent;
mod buffer;
mod mlp;

pub use agent::{
    actor_objective_grad, actor_objective_grad_reg, critic_input, critic_loss_grad, curve_csv,
    mse_loss, select_action, select_action_gaussian, train, Agent, EpisodeRecord, Exploration,
    Hyperparams, Trainer, CHECKPOINT_VERSION, CURVE_HEADER,
};
pub use buffer::ReplayBuffer;
pub use mlp::{soft_update, Dense, Mlp, OutputActivation, Sgdm, Tape};
