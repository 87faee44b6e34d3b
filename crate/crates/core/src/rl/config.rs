use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Reinforce,
    Dpg,
    Ddpg,
    Td3,
    Sac,
    Tqc,
    Ppo,
    Avg,
}

impl Algo {
    pub const ALL: [Algo; 8] = [
        Algo::Reinforce,
        Algo::Dpg,
        Algo::Ddpg,
        Algo::Td3,
        Algo::Sac,
        Algo::Tqc,
        Algo::Ppo,
        Algo::Avg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Reinforce => "reinforce",
            Algo::Dpg => "dpg",
            Algo::Ddpg => "ddpg",
            Algo::Td3 => "td3",
            Algo::Sac => "sac",
            Algo::Tqc => "tqc",
            Algo::Ppo => "ppo",
            Algo::Avg => "avg",
        }
    }

    /// Learns from a replay buffer.
    pub fn off_policy(self) -> bool {
        matches!(self, Algo::Ddpg | Algo::Td3 | Algo::Sac | Algo::Tqc)
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Hyperparameters shared by all algorithms; each uses the subset it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    /// Take uniformly random actions until `learning_starts`.
    pub random_warmup: bool,
    pub exploration_sigma: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub n_quantiles: usize,
    pub n_critics: usize,
    /// Quantiles dropped per critic from the pooled target.
    pub drop_quantiles: usize,
    pub huber_kappa: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub rollout_steps: usize,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub target_kl: f64,
    /// Multiplies rewards before they reach the learner.
    pub reward_scale: f64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            hidden: vec![64, 64],
            batch_size: 256,
            buffer_capacity: 50_000,
            learning_starts: 1_000,
            random_warmup: true,
            exploration_sigma: 0.1,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            n_quantiles: 25,
            n_critics: 5,
            drop_quantiles: 2,
            huber_kappa: 1.0,
            alpha: 0.2,
            auto_alpha: true,
            target_entropy: None,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            rollout_steps: 2_000,
            ppo_epochs: 10,
            minibatch_size: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            target_kl: 0.015,
            reward_scale: 1.0,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.lr_actor < 0.0 || self.lr_critic < 0.0 {
            return bad("learning rates must be non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer must hold at least one batch");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if self.n_quantiles == 0 || self.n_critics == 0 {
            return bad("quantile critics need at least one critic and one quantile");
        }
        if self.drop_quantiles >= self.n_quantiles {
            return bad("drop_quantiles must leave at least one quantile per critic");
        }
        if self.huber_kappa <= 0.0 {
            return bad("huber_kappa must be positive");
        }
        if self.alpha < 0.0 || self.exploration_sigma < 0.0 || self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("noise scales and alpha must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || self.clip_eps <= 0.0 {
            return bad("gae_lambda must lie in [0, 1] and clip_eps be positive");
        }
        if self.rollout_steps == 0 || self.ppo_epochs == 0 || self.minibatch_size == 0 {
            return bad("rollout sizes must be positive");
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }

    pub fn target_entropy(&self, action_dim: usize) -> f64 {
        self.target_entropy.unwrap_or(-(action_dim as f64))
    }
}
