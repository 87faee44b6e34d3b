//! Continuous-control learners. Every agent is a [`Controller`]: it acts,
//! and in training mode learns from the transitions it is shown.

mod avg;
mod buffer;
mod common;
mod config;
mod deterministic;
mod ppo;
mod reinforce;
mod returns;
mod sac;
mod tqc;
pub mod train;

use serde::Serialize;

use crate::env::Controller;
pub use crate::env::Transition;
use crate::nn::ParamVector;
use crate::Result;

pub use avg::{AvgAgent, TdScaler};
pub use buffer::ReplayBuffer;
pub use common::{td_targets, Batch, TanhActor};
pub use config::{Algo, AlgoConfig};
pub use deterministic::{min_q, td3_target_actions, DeterministicAgent};
pub use ppo::{ppo_surrogate, PpoAgent};
pub use reinforce::{reinforce_gradient, ReinforceAgent};
pub use returns::{discounted_returns, gae};
pub use sac::{alpha_gradient, SacAgent};
pub use tqc::{quantile_huber_loss, truncated_target_quantiles, TqcAgent};
pub use train::{train, train_episode, EpisodeRecord, StepRecord, TrainMonitor};

/// Which parameters to exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// The acting network only.
    Policy,
    /// Every network including critics and target copies.
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub updates: usize,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub alpha: Option<f64>,
}

pub trait Agent: Controller + Send {
    fn algo(&self) -> Algo;
    fn params(&self, scope: Scope) -> ParamVector;
    fn set_params(&mut self, scope: Scope, params: &ParamVector) -> Result<()>;
    fn reset_optimizers(&mut self);
    fn stats(&self) -> UpdateStats;
}

pub fn make_agent(
    algo: Algo,
    obs_dim: usize,
    action_dim: usize,
    cfg: &AlgoConfig,
    seed: u64,
) -> Result<Box<dyn Agent>> {
    cfg.validate()?;
    Ok(match algo {
        Algo::Dpg | Algo::Ddpg | Algo::Td3 => Box::new(DeterministicAgent::new(algo, obs_dim, action_dim, cfg, seed)?),
        Algo::Sac => Box::new(SacAgent::new(obs_dim, action_dim, cfg, seed)?),
        Algo::Tqc => Box::new(TqcAgent::new(obs_dim, action_dim, cfg, seed)?),
        Algo::Ppo => Box::new(PpoAgent::new(obs_dim, action_dim, cfg, seed)?),
        Algo::Reinforce => Box::new(ReinforceAgent::new(obs_dim, action_dim, cfg, seed)?),
        Algo::Avg => Box::new(AvgAgent::new(obs_dim, action_dim, cfg, seed)?),
    })
}

/// Agent RNG streams are decorrelated from environment seeds.
pub(crate) fn agent_rng(seed: u64) -> crate::Rng {
    crate::seeded_rng(seed ^ 0x5851_F42D_4C95_7F2D)
}
