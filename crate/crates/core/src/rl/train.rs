use std::ops::ControlFlow;

use serde::Serialize;

use super::{Agent, UpdateStats};
use crate::env::{Env, EpisodeSpec, Mode, Transition};
use crate::eval::TrainingCurve;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord<'a> {
    pub step: usize,
    pub episode: usize,
    pub reward: f64,
    pub action: &'a [f64],
    /// Physical parameters the environment applied.
    pub params: &'a [f64],
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Global step at which the episode ended.
    pub step: usize,
    pub episodic_return: f64,
    pub stats: UpdateStats,
}

pub trait TrainMonitor {
    fn on_step(&mut self, _record: &StepRecord<'_>) -> Result<()> {
        Ok(())
    }

    /// Returning `Break` ends training after this episode.
    fn on_episode(&mut self, _record: &EpisodeRecord) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }
}

impl TrainMonitor for () {}

/// Stops once an episodic return reaches `threshold`.
#[derive(Debug, Clone, Copy)]
pub struct StopAt(pub f64);

impl TrainMonitor for StopAt {
    fn on_episode(&mut self, record: &EpisodeRecord) -> Result<ControlFlow<()>> {
        Ok(if record.episodic_return >= self.0 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    }
}

/// Reset seed of each training episode.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(episode as u64)
}

/// Trains for `total_steps` environment steps (a whole number of episodes)
/// and returns the per-episode curve.
pub fn train<E: Env + ?Sized>(
    env: &mut E,
    agent: &mut dyn Agent,
    total_steps: usize,
    seed: u64,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainingCurve> {
    let spec = EpisodeSpec::new(env.episode_length(), total_steps)?;
    if agent.action_dim() != env.action_dim() {
        return Err(crate::Error::dim("agent action", env.action_dim(), agent.action_dim()));
    }
    if let Some(n) = agent.obs_dim().filter(|n| *n != env.obs_dim()) {
        return Err(crate::Error::dim("agent observation", env.obs_dim(), n));
    }
    let mut curve = TrainingCurve::default();
    let mut step = 0;
    for episode in 0..spec.episodes() {
        let ret = train_episode(env, agent, episode, seed, &mut step, monitor)?;
        curve.push(step, ret)?;
        let flow = monitor.on_episode(&EpisodeRecord {
            episode,
            step,
            episodic_return: ret,
            stats: agent.stats(),
        })?;
        if flow.is_break() {
            break;
        }
    }
    Ok(curve)
}

/// One training episode; `step` is the running global step counter. Returns
/// the undiscounted return.
pub fn train_episode<E: Env + ?Sized>(
    env: &mut E,
    agent: &mut dyn Agent,
    episode: usize,
    seed: u64,
    step: &mut usize,
    monitor: &mut dyn TrainMonitor,
) -> Result<f64> {
    let mut obs = env.reset(episode_seed(seed, episode));
    let mut ret = 0.0;
    loop {
        let action = agent.act(&obs, Mode::Train);
        let result = env.step(&action)?;
        *step += 1;
        let end = result.terminated || result.truncated;
        monitor.on_step(&StepRecord {
            step: *step,
            episode,
            reward: result.reward,
            action: &action,
            params: &result.info.params,
        })?;
        let transition = Transition {
            state: std::mem::take(&mut obs),
            action,
            reward: result.reward,
            next_state: result.observation.clone(),
            done: result.terminated,
        };
        agent.observe(&transition, end)?;
        ret += result.reward;
        obs = result.observation;
        if end {
            return Ok(ret);
        }
    }
}
