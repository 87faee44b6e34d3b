//! Truncated quantile critics: distributional critics whose pooled target
//! quantiles are cut at the top before bootstrapping.

use ndarray::{s, Array2};

use super::common::{mean, row, state_action, uniform_action, Batch};
use super::{agent_rng, Agent, Algo, AlgoConfig, ReplayBuffer, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, soft_update, Adam, GaussianHead, Layout, Mlp, ParamVector};
use crate::{Error, Result, Rng};

/// Sorts the pooled quantiles ascending and keeps the lowest `keep`.
pub fn truncated_target_quantiles(pooled: &[f64], keep: usize) -> Vec<f64> {
    let mut v = pooled.to_vec();
    v.sort_by(f64::total_cmp);
    v.truncate(keep);
    v
}

fn huber(u: f64, kappa: f64) -> (f64, f64) {
    if u.abs() <= kappa {
        (0.5 * u * u, u)
    } else {
        (kappa * (u.abs() - 0.5 * kappa), kappa * u.signum())
    }
}

/// Quantile Huber loss of predicted quantiles at midpoints
/// `τ_j = (2j + 1) / 2N` against a set of target samples: summed over
/// quantiles, averaged over targets. Returns the loss and its gradient
/// w.r.t. each predicted quantile.
pub fn quantile_huber_loss(pred: &[f64], targets: &[f64], kappa: f64) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let m = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (j, p) in pred.iter().enumerate() {
        let tau = (2.0 * j as f64 + 1.0) / (2.0 * n);
        for y in targets {
            let u = y - p;
            let weight = (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs();
            let (h, dh) = huber(u, kappa);
            loss += weight * h / kappa / m;
            grad[j] -= weight * dh / kappa / m;
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct TqcAgent {
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

impl TqcAgent {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.drop_quantiles * cfg.n_critics >= cfg.n_quantiles * cfg.n_critics {
            return Err(Error::Config("truncation would drop every target quantile".into()));
        }
        let mut rng = agent_rng(seed);
        let actor = GaussianHead::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        let layout = Layout::mlp(obs_dim + action_dim, &cfg.hidden, cfg.n_quantiles)?;
        let critics: Vec<Mlp> = (0..cfg.n_critics)
            .map(|_| Mlp::new(layout.clone(), 1.0, &mut rng))
            .collect();
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

    /// Number of pooled quantiles kept per sample.
    pub fn kept(&self) -> usize {
        (self.cfg.n_quantiles - self.cfg.drop_quantiles) * self.cfg.n_critics
    }

    /// Per-sample target atoms: `r + γ(1 − d)(z − α log π')`.
    pub fn target_atoms(&mut self, batch: &Batch) -> Result<Array2<f64>> {
        let s2 = batch.next_states.view();
        let next = self.actor.sample(s2, &mut self.rng)?;
        let input = state_action(&s2, &next.actions.view());
        let outs: Vec<Array2<f64>> = self
            .critic_targets
            .iter()
            .map(|c| c.forward(input.view()))
            .collect::<Result<_>>()?;
        let keep = self.kept();
        let alpha = self.alpha();
        let mut atoms = Array2::zeros((batch.len(), keep));
        for r in 0..batch.len() {
            let pooled: Vec<f64> = outs.iter().flat_map(|o| o.row(r).to_vec()).collect();
            let kept = truncated_target_quantiles(&pooled, keep);
            let live = if batch.dones[r] { 0.0 } else { self.cfg.gamma };
            for (k, z) in kept.iter().enumerate() {
                atoms[[r, k]] = batch.rewards[r] + live * (z - alpha * next.log_probs[r]);
            }
        }
        Ok(atoms)
    }

    pub fn update(&mut self, batch: &Batch) -> Result<()> {
        let n = batch.len();
        let atoms = self.target_atoms(batch)?;
        let input = state_action(&batch.states.view(), &batch.actions.view());
        let mut critic_loss = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let tape = critic.forward_tape(input.view())?;
            let mut upstream = Array2::zeros((n, self.cfg.n_quantiles));
            for r in 0..n {
                let pred = tape.output().row(r).to_vec();
                let (l, g) = quantile_huber_loss(&pred, atoms.row(r).as_slice().expect("row"), self.cfg.huber_kappa);
                critic_loss += l / n as f64;
                for (j, gj) in g.iter().enumerate() {
                    upstream[[r, j]] = gj / n as f64;
                }
            }
            let mut g = vec![0.0; critic.params().len()];
            critic.backward(&tape, upstream.view(), &mut g)?;
            opt.step(critic.params_mut(), &g);
        }

        // actor: mean(α log π − mean over critics and quantiles of Z(s, ã))
        let alpha = self.alpha();
        let sample = self.actor.sample(batch.states.view(), &mut self.rng)?;
        let input = state_action(&batch.states.view(), &sample.actions.view());
        let scale = -1.0 / (n * self.cfg.n_critics * self.cfg.n_quantiles) as f64;
        let mut d_actions = Array2::zeros((n, self.action_dim));
        let mut q_mean = 0.0;
        for critic in &self.critics {
            let tape = critic.forward_tape(input.view())?;
            q_mean += tape.output().sum() * -scale;
            let upstream = Array2::from_elem((n, self.cfg.n_quantiles), scale);
            let mut scratch = vec![0.0; critic.params().len()];
            let dx = critic.backward(&tape, upstream.view(), &mut scratch)?;
            d_actions += &dx.slice(s![.., self.obs_dim..]);
        }
        let d_log_prob = vec![alpha / n as f64; n];
        let mut g = vec![0.0; self.actor.net().params().len()];
        self.actor
            .reparam_backward(&sample, d_actions.view(), &d_log_prob, &mut g)?;
        self.actor_opt.step(self.actor.net_mut().params_mut(), &g);

        if self.cfg.auto_alpha {
            let grad = super::alpha_gradient(&sample.log_probs, self.cfg.target_entropy(self.action_dim));
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[grad]);
            self.log_alpha = la[0];
        }
        for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t.params_mut(), c.params(), self.cfg.tau);
        }
        self.stats.updates += 1;
        self.stats.critic_loss = Some(critic_loss / self.critics.len() as f64);
        self.stats.actor_loss = Some(alpha * mean(&sample.log_probs) - q_mean);
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

impl Controller for TqcAgent {
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

impl Agent for TqcAgent {
    fn algo(&self) -> Algo {
        Algo::Tqc
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
