//! DPG, DDPG and TD3: deterministic tanh actors with Q critics.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};

use super::common::{
    action_gradient, critic_mse_grads, explore, mean, q_values, state_action, td_targets, uniform_action, Batch,
    TanhActor,
};
use super::{agent_rng, Agent, Algo, AlgoConfig, ReplayBuffer, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, soft_update, Adam, Layout, Mlp, ParamVector};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone)]
pub struct DeterministicAgent {
    algo: Algo,
    cfg: AlgoConfig,
    obs_dim: usize,
    action_dim: usize,
    pub actor: TanhActor,
    pub actor_target: TanhActor,
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
    buffer: ReplayBuffer,
    rng: Rng,
    observed: usize,
    stats: UpdateStats,
}

/// Element-wise minimum over critics.
pub fn min_q(critics: &[Mlp], states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for c in critics {
        let q = q_values(c, states, actions)?;
        out = Some(match out {
            None => q,
            Some(m) => m.iter().zip(&q).map(|(a, b)| a.min(*b)).collect(),
        });
    }
    out.ok_or(Error::Empty("critic list"))
}

/// Target policy smoothing: clipped Gaussian noise on the target actor's
/// output, clamped back into the action box.
pub fn td3_target_actions(
    actor_target: &TanhActor,
    next_states: ArrayView2<'_, f64>,
    policy_noise: f64,
    noise_clip: f64,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let (_, mut a) = actor_target.forward(next_states)?;
    if policy_noise > 0.0 {
        let normal = Normal::new(0.0, policy_noise).expect("finite noise scale");
        a.mapv_inplace(|x| (x + normal.sample(rng).clamp(-noise_clip, noise_clip)).clamp(-1.0, 1.0));
    }
    Ok(a)
}

impl DeterministicAgent {
    pub fn new(algo: Algo, obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        if !matches!(algo, Algo::Dpg | Algo::Ddpg | Algo::Td3) {
            return Err(Error::Config(format!("{algo} is not a deterministic-policy method")));
        }
        cfg.validate()?;
        let mut rng = agent_rng(seed);
        let actor = TanhActor::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        let n_critics = if algo == Algo::Td3 { 2 } else { 1 };
        let critic_layout = Layout::mlp(obs_dim + action_dim, &cfg.hidden, 1)?;
        let critics: Vec<Mlp> = (0..n_critics)
            .map(|_| Mlp::new(critic_layout.clone(), 1.0, &mut rng))
            .collect();
        Ok(Self {
            algo,
            obs_dim,
            action_dim,
            actor_opt: Adam::new(actor.net.params().len(), cfg.lr_actor),
            critic_opts: critics
                .iter()
                .map(|c| Adam::new(c.params().len(), cfg.lr_critic))
                .collect(),
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            buffer: ReplayBuffer::new(if algo == Algo::Dpg { 1 } else { cfg.buffer_capacity }),
            cfg: cfg.clone(),
            rng,
            observed: 0,
            stats: UpdateStats::default(),
        })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cfg
    }

    /// Bootstrapped critic targets for a batch.
    pub fn targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let s2 = batch.next_states.view();
        let next = match self.algo {
            Algo::Dpg => {
                let (_, a2) = self.actor.forward(s2)?;
                q_values(&self.critics[0], s2, a2.view())?
            }
            Algo::Ddpg => {
                let (_, a2) = self.actor_target.forward(s2)?;
                q_values(&self.critic_targets[0], s2, a2.view())?
            }
            _ => {
                let a2 = td3_target_actions(
                    &self.actor_target,
                    s2,
                    self.cfg.policy_noise,
                    self.cfg.noise_clip,
                    &mut self.rng,
                )?;
                min_q(&self.critic_targets, s2, a2.view())?
            }
        };
        Ok(td_targets(&batch.rewards, &batch.dones, &next, self.cfg.gamma))
    }

    /// One learning step on a batch (a single transition for DPG).
    pub fn update(&mut self, batch: &Batch) -> Result<()> {
        let y = self.targets(batch)?;
        let mut critic_loss = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut g = vec![0.0; critic.params().len()];
            critic_loss += critic_mse_grads(critic, batch.states.view(), batch.actions.view(), &y, &mut g)?;
            opt.step(critic.params_mut(), &g);
        }
        self.stats.critic_loss = Some(critic_loss / self.critics.len() as f64);
        self.stats.updates += 1;

        let delayed = self.algo == Algo::Td3 && !self.stats.updates.is_multiple_of(self.cfg.policy_delay);
        if delayed {
            return Ok(());
        }
        // actor ascends Q1(s, π(s))
        let (tape, actions) = self.actor.forward(batch.states.view())?;
        let critic_tape = self.critics[0].forward_tape(state_action(&batch.states.view(), &actions.view()).view())?;
        let n = batch.len() as f64;
        self.stats.actor_loss = Some(-mean(critic_tape.output().as_slice().expect("contiguous")));
        let upstream = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let d_actions = action_gradient(&self.critics[0], &critic_tape, upstream.view(), self.obs_dim)?;
        let mut g = vec![0.0; self.actor.net.params().len()];
        self.actor.backward(&tape, &actions, &d_actions, &mut g)?;
        self.actor_opt.step(self.actor.net.params_mut(), &g);

        if self.algo != Algo::Dpg {
            let tau = self.cfg.tau;
            soft_update(self.actor_target.net.params_mut(), self.actor.net.params(), tau);
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                soft_update(t.params_mut(), c.params(), tau);
            }
        }
        Ok(())
    }

    fn nets(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.actor.net];
        v.extend(self.critics.iter());
        v.push(&self.actor_target.net);
        v.extend(self.critic_targets.iter());
        v
    }
}

impl Controller for DeterministicAgent {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn obs_dim(&self) -> Option<usize> {
        Some(self.obs_dim)
    }

    fn act(&mut self, obs: &[f64], mode: Mode) -> Vec<f64> {
        if mode == Mode::Train
            && self.algo != Algo::Dpg
            && self.cfg.random_warmup
            && self.observed < self.cfg.learning_starts
        {
            return uniform_action(self.action_dim, &mut self.rng);
        }
        let mut a = self.actor.act(obs).expect("observation width checked by the caller");
        if mode == Mode::Train {
            explore(&mut a, self.cfg.exploration_sigma, &mut self.rng);
        }
        a
    }

    fn observe(&mut self, transition: &Transition, _episode_end: bool) -> Result<()> {
        self.observed += 1;
        if self.algo == Algo::Dpg {
            let batch = Batch::from_transitions(&[transition], self.cfg.reward_scale);
            return self.update(&batch);
        }
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

impl Agent for DeterministicAgent {
    fn algo(&self) -> Algo {
        self.algo
    }

    fn params(&self, scope: Scope) -> ParamVector {
        match scope {
            Scope::Policy => flatten(&[&self.actor.net]),
            Scope::All => flatten(&self.nets()),
        }
    }

    fn set_params(&mut self, scope: Scope, params: &ParamVector) -> Result<()> {
        match scope {
            Scope::Policy => load_into(params, &mut [&mut self.actor.net]),
            Scope::All => {
                let mut nets: Vec<&mut Mlp> = vec![&mut self.actor.net];
                nets.extend(self.critics.iter_mut());
                nets.push(&mut self.actor_target.net);
                nets.extend(self.critic_targets.iter_mut());
                load_into(params, &mut nets)
            }
        }
    }

    fn reset_optimizers(&mut self) {
        self.actor_opt.reset();
        self.critic_opts.iter_mut().for_each(Adam::reset);
    }

    fn stats(&self) -> UpdateStats {
        self.stats.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use rand::Rng as _;

    use crate::rl::common::row;

    fn greedy(agent: &DeterministicAgent, obs: &[f64]) -> Result<Vec<f64>> {
        let (_, a) = agent.actor.forward(row(obs))?;
        Ok(a.into_raw_vec_and_offset().0)
    }

    fn cfg() -> AlgoConfig {
        AlgoConfig {
            hidden: vec![16],
            batch_size: 8,
            learning_starts: 8,
            ..AlgoConfig::default()
        }
    }

    fn batch(n: usize, seed: u64, reward: Option<f64>) -> Batch {
        let mut rng = crate::seeded_rng(seed);
        let items: Vec<Transition> = (0..n)
            .map(|_| Transition {
                state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                action: vec![rng.random_range(-1.0..1.0)],
                reward: reward.unwrap_or_else(|| rng.random_range(-1.0..1.0)),
                next_state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                done: false,
            })
            .collect();
        Batch::from_transitions(&items.iter().collect::<Vec<_>>(), 1.0)
    }

    #[test]
    fn unit_tau_copies_online_nets() {
        let c = AlgoConfig { tau: 1.0, ..cfg() };
        let mut agent = DeterministicAgent::new(Algo::Ddpg, 2, 1, &c, 0).unwrap();
        agent.update(&batch(8, 1, None)).unwrap();
        assert_eq!(agent.actor_target, agent.actor);
        assert_eq!(agent.critic_targets, agent.critics);
    }

    #[test]
    fn zero_gamma_critic_fits_constant_reward() {
        let c = AlgoConfig {
            gamma: 0.0,
            lr_critic: 1e-2,
            lr_actor: 0.0,
            ..cfg()
        };
        let mut agent = DeterministicAgent::new(Algo::Ddpg, 2, 1, &c, 0).unwrap();
        let b = batch(16, 2, Some(0.7));
        assert_eq!(agent.targets(&b).unwrap(), vec![0.7; 16]);
        for _ in 0..1500 {
            agent.update(&b).unwrap();
        }
        for q in q_values(&agent.critics[0], b.states.view(), b.actions.view()).unwrap() {
            assert!((q - 0.7).abs() < 1e-2, "{q}");
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let run = || {
            let mut agent = DeterministicAgent::new(Algo::Td3, 2, 1, &cfg(), 5).unwrap();
            for k in 0..4 {
                agent.update(&batch(8, k, None)).unwrap();
            }
            agent.params(Scope::All)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_learning_rate_freezes_online_nets() {
        for algo in [Algo::Dpg, Algo::Ddpg, Algo::Td3] {
            let c = AlgoConfig {
                lr_actor: 0.0,
                lr_critic: 0.0,
                ..cfg()
            };
            let mut agent = DeterministicAgent::new(algo, 2, 1, &c, 3).unwrap();
            let before = (agent.actor.clone(), agent.critics.clone());
            for k in 0..3 {
                agent.update(&batch(8, k, None)).unwrap();
            }
            assert_eq!(agent.actor, before.0);
            assert_eq!(agent.critics, before.1);
        }
    }

    #[test]
    fn zero_noise_clip_gives_deterministic_target_actions() {
        let mut rng = crate::seeded_rng(0);
        let actor = TanhActor::new(2, &[8], 2, &mut rng).unwrap();
        let s = batch(5, 9, None).next_states;
        let smoothed = td3_target_actions(&actor, s.view(), 0.2, 0.0, &mut rng).unwrap();
        assert_eq!(smoothed, actor.forward(s.view()).unwrap().1);
    }

    #[test]
    fn twin_minimum_picks_unbiased_critic() {
        let mut rng = crate::seeded_rng(1);
        let q1 = Mlp::new(Layout::mlp(3, &[8], 1).unwrap(), 1.0, &mut rng);
        let mut q2 = q1.clone();
        let n = q2.params().len();
        q2.params_mut()[n - 1] += 0.5;
        let b = batch(6, 4, None);
        assert_eq!(
            min_q(&[q1.clone(), q1.clone()], b.states.view(), b.actions.view()).unwrap(),
            q_values(&q1, b.states.view(), b.actions.view()).unwrap()
        );
        let m = min_q(&[q2.clone(), q1.clone()], b.states.view(), b.actions.view()).unwrap();
        let base = q_values(&q1, b.states.view(), b.actions.view()).unwrap();
        assert_eq!(m, base);
        let biased = q_values(&q2, b.states.view(), b.actions.view()).unwrap();
        for (a, b) in biased.iter().zip(&base) {
            assert!((a - b - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn td3_target_never_exceeds_single_critic_target() {
        let c = AlgoConfig {
            policy_noise: 0.0,
            ..cfg()
        };
        let mut td3 = DeterministicAgent::new(Algo::Td3, 2, 1, &c, 7).unwrap();
        let b = batch(10, 3, None);
        let y = td3.targets(&b).unwrap();
        let (_, a2) = td3.actor_target.forward(b.next_states.view()).unwrap();
        let single = td_targets(
            &b.rewards,
            &b.dones,
            &q_values(&td3.critic_targets[0], b.next_states.view(), a2.view()).unwrap(),
            c.gamma,
        );
        for (t, s) in y.iter().zip(&single) {
            assert!(t <= s);
        }
    }

    #[test]
    fn td3_delays_actor_updates() {
        let mut agent = DeterministicAgent::new(Algo::Td3, 2, 1, &cfg(), 1).unwrap();
        let actor = agent.actor.clone();
        agent.update(&batch(8, 0, None)).unwrap();
        assert_eq!(agent.actor, actor);
        agent.update(&batch(8, 1, None)).unwrap();
        assert_ne!(agent.actor, actor);
    }

    #[test]
    fn dpg_actor_step_follows_critic_gradient() {
        // first-order check: a small actor step increases Q(s, π(s))
        let c = AlgoConfig {
            lr_actor: 1e-4,
            lr_critic: 0.0,
            ..cfg()
        };
        let mut agent = DeterministicAgent::new(Algo::Dpg, 2, 1, &c, 11).unwrap();
        let b = batch(1, 8, None);
        let q_pi = |a: &DeterministicAgent| {
            let act = greedy(a, b.states.row(0).as_slice().unwrap()).unwrap();
            q_values(&a.critics[0], b.states.view(), row(&act)).unwrap()[0]
        };
        let before = q_pi(&agent);
        agent.update(&b).unwrap();
        assert!(q_pi(&agent) > before);
    }

    #[test]
    fn parameter_exchange_round_trips() {
        let mut a = DeterministicAgent::new(Algo::Td3, 2, 1, &cfg(), 1).unwrap();
        let b = DeterministicAgent::new(Algo::Td3, 2, 1, &cfg(), 2).unwrap();
        a.set_params(Scope::All, &b.params(Scope::All)).unwrap();
        assert_eq!(a.params(Scope::All), b.params(Scope::All));
        let other = DeterministicAgent::new(Algo::Ddpg, 2, 1, &cfg(), 2).unwrap();
        assert!(a.set_params(Scope::All, &other.params(Scope::All)).is_err());
    }
}
