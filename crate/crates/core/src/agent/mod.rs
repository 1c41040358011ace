//! Hybrid learner: a dueling double-Q head schedules subcarriers while a
//! soft actor-critic head emits beamformers, IRS phases and acceleration.
//! Both heads share one observation encoder.

mod heads;
mod learner;
pub(crate) mod policy;
mod replay;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use heads::{
    d3qn_head_loss, d3qn_loss, double_q_target, dueling_q, dueling_q_batch, greedy, head_output_len, joint_q, select_discrete,
    D3qnLoss,
};
pub use learner::{Agent, AgentOptimizers, AgentParams, UpdateStats};
pub use policy::{
    actor_loss, critic_head_loss, critic_loss, sample_tanh_gaussian, soft_bellman_target, squashed_log_density, tanh_gaussian,
    temperature_loss, ActionLayout, ActorLoss, BeamformerMode, ContinuousAction, CriticLoss, LOG_STD_MAX, LOG_STD_MIN,
};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{episode_seed, exploration_rate, train, Checkpoint, TrainedPolicy, Trainer, TrainingRow};

/// Learner settings. `None` entries are derived from the system config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentHparams {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    /// Gradient steps per environment slot.
    pub grad_steps_per_slot: usize,
    pub buffer_capacity: usize,
    pub lr_q: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_alpha: f64,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the episodes over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub init_alpha: f64,
    /// Defaults to minus the continuous action dimension.
    pub target_entropy: Option<f64>,
    /// Multiplies environment rewards before they enter the replay.
    /// Defaults to the reference propulsion power over the bandwidth.
    pub reward_scale: Option<f64>,
}

impl Default for AgentHparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            grad_steps_per_slot: 1,
            buffer_capacity: 100_000,
            lr_q: 3e-4,
            lr_critic: 3e-4,
            lr_actor: 3e-4,
            lr_alpha: 3e-4,
            encoder_hidden: vec![128, 128],
            head_hidden: vec![64, 64],
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.3,
            init_alpha: 0.1,
            target_entropy: None,
            reward_scale: None,
        }
    }
}

impl AgentHparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity", "must hold at least one batch");
        }
        for (name, lr) in [("lr_q", self.lr_q), ("lr_critic", self.lr_critic), ("lr_actor", self.lr_actor), ("lr_alpha", self.lr_alpha)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(name, "must be positive");
            }
        }
        if self.encoder_hidden.is_empty() || self.encoder_hidden.contains(&0) {
            return bad("encoder_hidden", "needs at least one non-empty layer");
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden", "layer widths must be positive");
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end), ("epsilon_decay_fraction", self.epsilon_decay_fraction)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(name, "must lie in [0, 1]");
            }
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad("init_alpha", "must be positive");
        }
        if self.reward_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("reward_scale", "must be positive");
        }
        if self.target_entropy.is_some_and(|h| !h.is_finite()) {
            return bad("target_entropy", "must be finite");
        }
        Ok(())
    }

    /// Copy with every derived default written out.
    pub fn resolved(&self, cfg: &crate::SystemConfig) -> Self {
        let layout = ActionLayout::from_config(cfg);
        Self {
            target_entropy: Some(self.target_entropy.unwrap_or(-(layout.dim() as f64))),
            reward_scale: Some(self.reward_scale.unwrap_or_else(|| crate::env::reference_power_w(cfg) / cfg.bandwidth_hz)),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests;
