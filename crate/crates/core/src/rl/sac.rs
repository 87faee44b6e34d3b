//! Soft actor-critic with twin critics and optional entropy tuning.

use ndarray::Array2;

use super::common::{action_gradient, critic_mse_grads, mean, row, state_action, td_targets, uniform_action, Batch};
use super::deterministic::min_q;
use super::{agent_rng, Agent, Algo, AlgoConfig, ReplayBuffer, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, soft_update, Adam, GaussianHead, Layout, Mlp, ParamVector};
use crate::{Result, Rng};

/// ∂/∂(log α) of `−log α · mean(log π + H̄)`.
pub fn alpha_gradient(log_probs: &[f64], target_entropy: f64) -> f64 {
    -(mean(log_probs) + target_entropy)
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: AlgoConfig,
    obs_dim: usize,
    action_dim: usize,
    pub actor: GaussianHead,
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    pub log_alpha: f64,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
    alpha_opt: Adam,
    buffer: ReplayBuffer,
    rng: Rng,
    observed: usize,
    stats: UpdateStats,
}

impl SacAgent {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = agent_rng(seed);
        let actor = GaussianHead::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        let layout = Layout::mlp(obs_dim + action_dim, &cfg.hidden, 1)?;
        let critics: Vec<Mlp> = (0..2).map(|_| Mlp::new(layout.clone(), 1.0, &mut rng)).collect();
        Ok(Self {
            obs_dim,
            action_dim,
            actor_opt: Adam::new(actor.net().params().len(), cfg.lr_actor),
            critic_opts: critics
                .iter()
                .map(|c| Adam::new(c.params().len(), cfg.lr_critic))
                .collect(),
            alpha_opt: Adam::new(1, cfg.lr_actor),
            log_alpha: cfg.alpha.max(1e-12).ln(),
            critic_targets: critics.clone(),
            critics,
            actor,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg: cfg.clone(),
            rng,
            observed: 0,
            stats: UpdateStats::default(),
        })
    }

    pub fn alpha(&self) -> f64 {
        if self.cfg.alpha == 0.0 && !self.cfg.auto_alpha {
            0.0
        } else {
            self.log_alpha.exp()
        }
    }

    pub fn targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let s2 = batch.next_states.view();
        let next = self.actor.sample(s2, &mut self.rng)?;
        let q = min_q(&self.critic_targets, s2, next.actions.view())?;
        let alpha = self.alpha();
        let soft: Vec<f64> = q.iter().zip(&next.log_probs).map(|(q, lp)| q - alpha * lp).collect();
        Ok(td_targets(&batch.rewards, &batch.dones, &soft, self.cfg.gamma))
    }

    pub fn update(&mut self, batch: &Batch) -> Result<()> {
        let y = self.targets(batch)?;
        let mut critic_loss = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut g = vec![0.0; critic.params().len()];
            critic_loss += critic_mse_grads(critic, batch.states.view(), batch.actions.view(), &y, &mut g)?;
            opt.step(critic.params_mut(), &g);
        }

        // actor: mean(α log π(ã|s) − min Q(s, ã))
        let n = batch.len();
        let alpha = self.alpha();
        let sample = self.actor.sample(batch.states.view(), &mut self.rng)?;
        let input = state_action(&batch.states.view(), &sample.actions.view());
        let tapes: Vec<_> = self
            .critics
            .iter()
            .map(|c| c.forward_tape(input.view()))
            .collect::<Result<_>>()?;
        let mut upstreams = vec![Array2::zeros((n, 1)); tapes.len()];
        let mut actor_loss = 0.0;
        for r in 0..n {
            let (best, q) = tapes
                .iter()
                .enumerate()
                .map(|(i, t)| (i, t.output()[[r, 0]]))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("two critics");
            upstreams[best][[r, 0]] = -1.0 / n as f64;
            actor_loss += (alpha * sample.log_probs[r] - q) / n as f64;
        }
        let mut d_actions = Array2::zeros((n, self.action_dim));
        for ((critic, tape), up) in self.critics.iter().zip(&tapes).zip(&upstreams) {
            d_actions += &action_gradient(critic, tape, up.view(), self.obs_dim)?;
        }
        let d_log_prob = vec![alpha / n as f64; n];
        let mut g = vec![0.0; self.actor.net().params().len()];
        self.actor
            .reparam_backward(&sample, d_actions.view(), &d_log_prob, &mut g)?;
        self.actor_opt.step(self.actor.net_mut().params_mut(), &g);

        if self.cfg.auto_alpha {
            let grad = alpha_gradient(&sample.log_probs, self.cfg.target_entropy(self.action_dim));
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[grad]);
            self.log_alpha = la[0];
        }
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t.params_mut(), c.params(), self.cfg.tau);
        }
        self.stats.updates += 1;
        self.stats.critic_loss = Some(critic_loss / 2.0);
        self.stats.actor_loss = Some(actor_loss);
        self.stats.alpha = Some(self.alpha());
        Ok(())
    }

    fn nets(&self) -> Vec<&Mlp> {
        let mut v = vec![self.actor.net()];
        v.extend(self.critics.iter());
        v.extend(self.critic_targets.iter());
        v
    }
}

impl Controller for SacAgent {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn obs_dim(&self) -> Option<usize> {
        Some(self.obs_dim)
    }

    fn act(&mut self, obs: &[f64], mode: Mode) -> Vec<f64> {
        match mode {
            Mode::Infer => self.actor.mode(obs).expect("observation width checked by the caller"),
            Mode::Train if self.cfg.random_warmup && self.observed < self.cfg.learning_starts => {
                uniform_action(self.action_dim, &mut self.rng)
            }
            Mode::Train => {
                let s = self
                    .actor
                    .sample(row(obs), &mut self.rng)
                    .expect("observation width checked by the caller");
                s.actions.into_raw_vec_and_offset().0
            }
        }
    }

    fn observe(&mut self, transition: &Transition, _episode_end: bool) -> Result<()> {
        self.observed += 1;
        self.buffer.push(transition.clone());
        if self.observed >= self.cfg.learning_starts && self.buffer.len() >= self.cfg.batch_size {
            let batch = {
                let items = self.buffer.sample(self.cfg.batch_size, &mut self.rng)?;
                Batch::from_transitions(&items, self.cfg.reward_scale)
            };
            self.update(&batch)?;
        }
        Ok(())
    }
}

impl Agent for SacAgent {
    fn algo(&self) -> Algo {
        Algo::Sac
    }

    fn params(&self, scope: Scope) -> ParamVector {
        match scope {
            Scope::Policy => flatten(&[self.actor.net()]),
            Scope::All => flatten(&self.nets()),
        }
    }

    fn set_params(&mut self, scope: Scope, params: &ParamVector) -> Result<()> {
        match scope {
            Scope::Policy => load_into(params, &mut [self.actor.net_mut()]),
            Scope::All => {
                let mut nets: Vec<&mut Mlp> = vec![self.actor.net_mut()];
                nets.extend(self.critics.iter_mut());
                nets.extend(self.critic_targets.iter_mut());
                load_into(params, &mut nets)
            }
        }
    }

    fn reset_optimizers(&mut self) {
        self.actor_opt.reset();
        self.alpha_opt.reset();
        self.critic_opts.iter_mut().for_each(Adam::reset);
    }

    fn stats(&self) -> UpdateStats {
        self.stats.clone()
    }
}
