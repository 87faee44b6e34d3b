//! Proximal policy optimisation with a separate value network.

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::common::{mean, row};
use super::{agent_rng, gae, Agent, Algo, AlgoConfig, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, Adam, GaussianHead, Layout, Mlp, ParamVector};
use crate::{Result, Rng};

/// `(min(ρA, clip(ρ)A), ρA)` for one sample.
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    (unclipped.min(clipped), unclipped)
}

#[derive(Debug, Clone)]
struct Step {
    state: Vec<f64>,
    pre: Vec<f64>,
    log_prob: f64,
    reward: f64,
    next_state: Vec<f64>,
    done: bool,
    cut: bool,
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    cfg: AlgoConfig,
    obs_dim: usize,
    action_dim: usize,
    pub actor: GaussianHead,
    pub value: Mlp,
    actor_opt: Adam,
    value_opt: Adam,
    rollout: Vec<Step>,
    pending: Option<(Vec<f64>, f64)>,
    rng: Rng,
    stats: UpdateStats,
}

impl PpoAgent {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = agent_rng(seed);
        let actor = GaussianHead::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        let value = Mlp::new(Layout::mlp(obs_dim, &cfg.hidden, 1)?, 1.0, &mut rng);
        Ok(Self {
            obs_dim,
            action_dim,
            actor_opt: Adam::new(actor.net().params().len(), cfg.lr_actor),
            value_opt: Adam::new(value.params().len(), cfg.lr_critic),
            actor,
            value,
            rollout: Vec::new(),
            pending: None,
            cfg: cfg.clone(),
            rng,
            stats: UpdateStats::default(),
        })
    }

    fn matrix(rows: &[&Vec<f64>]) -> Array2<f64> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        Array2::from_shape_vec(
            (rows.len(), cols),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .expect("rows share width")
    }

    fn learn(&mut self) -> Result<()> {
        let steps = std::mem::take(&mut self.rollout);
        let states = Self::matrix(&steps.iter().map(|s| &s.state).collect::<Vec<_>>());
        let next = Self::matrix(&steps.iter().map(|s| &s.next_state).collect::<Vec<_>>());
        let pre = Self::matrix(&steps.iter().map(|s| &s.pre).collect::<Vec<_>>());
        let values = self.value.forward(states.view())?.into_raw_vec_and_offset().0;
        let next_values = self.value.forward(next.view())?.into_raw_vec_and_offset().0;
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward * self.cfg.reward_scale).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
        let cuts: Vec<bool> = steps.iter().map(|s| s.cut).collect();
        let adv = gae(
            &rewards,
            &values,
            &next_values,
            &dones,
            &cuts,
            self.cfg.gamma,
            self.cfg.gae_lambda,
        );
        let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
        let (mu, sd) = (mean(&adv), crate::eval::population_variance(&adv).sqrt());
        let adv: Vec<f64> = adv.iter().map(|a| (a - mu) / (sd + 1e-8)).collect();
        let old: Vec<f64> = steps.iter().map(|s| s.log_prob).collect();

        let mut order: Vec<usize> = (0..steps.len()).collect();
        'epochs: for _ in 0..self.cfg.ppo_epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), chunk);
                let (s, u) = (pick(&states), pick(&pre));
                let n = chunk.len() as f64;
                let eval = self.actor.evaluate(s.view(), u.view())?;
                let mut d_log_prob = vec![0.0; chunk.len()];
                let mut surrogate = 0.0;
                let mut kl = 0.0;
                for (k, &i) in chunk.iter().enumerate() {
                    let ratio = (eval.log_probs[k] - old[i]).exp();
                    let (clipped, unclipped) = ppo_surrogate(ratio, adv[i], self.cfg.clip_eps);
                    surrogate += clipped / n;
                    kl += (old[i] - eval.log_probs[k]) / n;
                    // the min picks the unclipped branch exactly when it is active
                    if clipped == unclipped {
                        d_log_prob[k] = -adv[i] * ratio / n;
                    }
                }
                if kl > self.cfg.target_kl {
                    break 'epochs;
                }
                let d_entropy = vec![-self.cfg.entropy_coef / n; chunk.len()];
                let mut g = vec![0.0; self.actor.net().params().len()];
                self.actor.score_backward(&eval, &d_log_prob, &d_entropy, &mut g)?;
                self.actor_opt.step(self.actor.net_mut().params_mut(), &g);

                let tape = self.value.forward_tape(s.view())?;
                let mut value_loss = 0.0;
                let up = Array2::from_shape_fn((chunk.len(), 1), |(k, _)| {
                    let e = tape.output()[[k, 0]] - returns[chunk[k]];
                    value_loss += e * e / n;
                    self.cfg.value_coef * 2.0 * e / n
                });
                let mut g = vec![0.0; self.value.params().len()];
                self.value.backward(&tape, up.view(), &mut g)?;
                self.value_opt.step(self.value.params_mut(), &g);
                self.stats.updates += 1;
                self.stats.actor_loss = Some(-surrogate);
                self.stats.critic_loss = Some(value_loss);
            }
        }
        Ok(())
    }
}

impl Controller for PpoAgent {
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
                let (pre, a, lp) = self
                    .actor
                    .sample_one(obs, &mut self.rng)
                    .expect("observation width checked by the caller");
                self.pending = Some((pre, lp));
                a
            }
        }
    }

    fn observe(&mut self, transition: &Transition, episode_end: bool) -> Result<()> {
        let (pre, log_prob) = match self.pending.take() {
            Some(p) => p,
            // transition produced by someone else: score its action as-is
            None => {
                let pre: Vec<f64> = transition
                    .action
                    .iter()
                    .map(|a| a.clamp(-1.0 + 1e-6, 1.0 - 1e-6).atanh())
                    .collect();
                let eval = self.actor.evaluate(row(&transition.state), row(&pre))?;
                (pre, eval.log_probs[0])
            }
        };
        self.rollout.push(Step {
            state: transition.state.clone(),
            pre,
            log_prob,
            reward: transition.reward,
            next_state: transition.next_state.clone(),
            done: transition.done,
            cut: episode_end,
        });
        if self.rollout.len() >= self.cfg.rollout_steps {
            self.learn()?;
        }
        Ok(())
    }
}

impl Agent for PpoAgent {
    fn algo(&self) -> Algo {
        Algo::Ppo
    }

    fn params(&self, scope: Scope) -> ParamVector {
        match scope {
            Scope::Policy => flatten(&[self.actor.net()]),
            Scope::All => flatten(&[self.actor.net(), &self.value]),
        }
    }

    fn set_params(&mut self, scope: Scope, params: &ParamVector) -> Result<()> {
        match scope {
            Scope::Policy => load_into(params, &mut [self.actor.net_mut()]),
            Scope::All => {
                let Self { actor, value, .. } = self;
                load_into(params, &mut [actor.net_mut(), value])
            }
        }
    }

    fn reset_optimizers(&mut self) {
        self.actor_opt.reset();
        self.value_opt.reset();
    }

    fn stats(&self) -> UpdateStats {
        self.stats.clone()
    }
}
