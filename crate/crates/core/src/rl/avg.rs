//! Action value gradient: incremental actor-critic that learns from each
//! transition as it arrives, with TD errors normalised by a running scale.

use ndarray::Array2;

use super::common::{action_gradient, q_values, row, state_action};
use super::{agent_rng, Agent, Algo, AlgoConfig, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, Adam, GaussianHead, Layout, Mlp, ParamVector};
use crate::{Result, Rng};

pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }
}

/// Running scale of entropy-augmented TD errors from reward, discount and
/// squared-return statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TdScaler {
    rewards: Welford,
    gammas: Welford,
    returns_sq: Welford,
    /// Undiscounted entropy-augmented return of the current episode.
    pub running_return: f64,
}

impl TdScaler {
    /// `episode_end` folds the running return into the statistics, records
    /// a zero discount and restarts accumulation.
    pub fn update(&mut self, reward: f64, gamma: f64, episode_end: bool) {
        self.running_return += reward;
        self.rewards.push(reward);
        if episode_end {
            self.gammas.push(0.0);
            self.returns_sq.push(self.running_return * self.running_return);
            self.running_return = 0.0;
        } else {
            self.gammas.push(gamma);
        }
    }

    pub fn samples(&self) -> u64 {
        self.rewards.n
    }

    /// Unit until two samples exist, then floored at [`SIGMA_FLOOR`].
    pub fn sigma(&self) -> f64 {
        if self.rewards.n < 2 {
            return 1.0;
        }
        let var = self.rewards.variance() + self.gammas.variance() * self.returns_sq.mean;
        var.sqrt().max(SIGMA_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct AvgAgent {
    cfg: AlgoConfig,
    obs_dim: usize,
    action_dim: usize,
    pub actor: GaussianHead,
    pub critic: Mlp,
    pub scaler: TdScaler,
    actor_opt: Adam,
    critic_opt: Adam,
    pending_log_prob: Option<f64>,
    rng: Rng,
    stats: UpdateStats,
    last_td: f64,
}

impl AvgAgent {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = agent_rng(seed);
        let actor = GaussianHead::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        let critic = Mlp::new(Layout::mlp(obs_dim + action_dim, &cfg.hidden, 1)?, 1.0, &mut rng);
        Ok(Self {
            obs_dim,
            action_dim,
            actor_opt: Adam::new(actor.net().params().len(), cfg.lr_actor),
            critic_opt: Adam::new(critic.params().len(), cfg.lr_critic),
            actor,
            critic,
            scaler: TdScaler::default(),
            pending_log_prob: None,
            cfg: cfg.clone(),
            rng,
            stats: UpdateStats::default(),
            last_td: 0.0,
        })
    }

    /// Unscaled TD error of the latest update.
    pub fn last_td_error(&self) -> f64 {
        self.last_td
    }

    pub fn update(&mut self, t: &Transition, log_prob: f64, episode_end: bool) -> Result<()> {
        let alpha = self.cfg.alpha;
        let gamma = self.cfg.gamma;
        let reward = t.reward * self.cfg.reward_scale;
        self.scaler.update(reward - alpha * log_prob, gamma, episode_end);
        let sigma = self.scaler.sigma();

        // critic: ((r + γ(1−d)(Q(s',a') − α log π(a'|s')) − Q(s,a)) / σ)²
        let next = self.actor.sample(row(&t.next_state), &mut self.rng)?;
        let bootstrap = if t.done {
            0.0
        } else {
            let q2 = q_values(&self.critic, row(&t.next_state), next.actions.view())?[0];
            gamma * (q2 - alpha * next.log_probs[0])
        };
        let tape = self
            .critic
            .forward_tape(state_action(&row(&t.state), &row(&t.action)).view())?;
        let q = tape.output()[[0, 0]];
        let delta = reward + bootstrap - q;
        self.last_td = delta;
        let mut g = vec![0.0; self.critic.params().len()];
        let upstream = Array2::from_elem((1, 1), -2.0 * delta / (sigma * sigma));
        self.critic.backward(&tape, upstream.view(), &mut g)?;
        self.critic_opt.step(self.critic.params_mut(), &g);

        // actor: α log π(ã|s) − Q(s, ã)
        let sample = self.actor.sample(row(&t.state), &mut self.rng)?;
        let ctape = self
            .critic
            .forward_tape(state_action(&row(&t.state), &sample.actions.view()).view())?;
        let d_actions = action_gradient(
            &self.critic,
            &ctape,
            Array2::from_elem((1, 1), -1.0).view(),
            self.obs_dim,
        )?;
        let mut g = vec![0.0; self.actor.net().params().len()];
        self.actor
            .reparam_backward(&sample, d_actions.view(), &[alpha], &mut g)?;
        self.actor_opt.step(self.actor.net_mut().params_mut(), &g);

        self.stats.updates += 1;
        self.stats.critic_loss = Some((delta / sigma).powi(2));
        self.stats.actor_loss = Some(alpha * sample.log_probs[0] - ctape.output()[[0, 0]]);
        self.stats.alpha = Some(alpha);
        Ok(())
    }
}

impl Controller for AvgAgent {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn obs_dim(&self) -> Option<usize> {
        Some(self.obs_dim)
    }

    fn act(&mut self, obs: &[f64], mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Infer => self.actor.mode(obs).expect("observation width checked by the caller"),
            Mode::Train => {
                let (_, a, lp) = self
                    .actor
                    .sample_one(obs, &mut self.rng)
                    .expect("observation width checked by the caller");
                self.pending_log_prob = Some(lp);
                a
            }
        }
    }

    fn observe(&mut self, transition: &Transition, episode_end: bool) -> Result<()> {
        let log_prob = match self.pending_log_prob.take() {
            Some(lp) => lp,
            None => {
                let pre: Vec<f64> = transition
                    .action
                    .iter()
                    .map(|a| a.clamp(-1.0 + 1e-6, 1.0 - 1e-6).atanh())
                    .collect();
                self.actor.evaluate(row(&transition.state), row(&pre))?.log_probs[0]
            }
        };
        self.update(transition, log_prob, episode_end)
    }
}

impl Agent for AvgAgent {
    fn algo(&self) -> Algo {
        Algo::Avg
    }

    fn params(&self, scope: Scope) -> ParamVector {
        match scope {
            Scope::Policy => flatten(&[self.actor.net()]),
            Scope::All => flatten(&[self.actor.net(), &self.critic]),
        }
    }

    fn set_params(&mut self, scope: Scope, params: &ParamVector) -> Result<()> {
        match scope {
            Scope::Policy => load_into(params, &mut [self.actor.net_mut()]),
            Scope::All => {
                let Self { actor, critic, .. } = self;
                load_into(params, &mut [actor.net_mut(), critic])
            }
        }
    }

    fn reset_optimizers(&mut self) {
        self.actor_opt.reset();
        self.critic_opt.reset();
    }

    fn stats(&self) -> UpdateStats {
        self.stats.clone()
    }
}
