//! Monte-Carlo policy gradient, one update per episode.

use ndarray::Array2;

use super::{agent_rng, discounted_returns, Agent, Algo, AlgoConfig, Scope, UpdateStats};
use crate::env::{Controller, Mode, Transition};
use crate::nn::{flatten, load_into, Adam, GaussianHead, ParamVector};
use crate::{Error, Result, Rng};

/// Gradient of `−(1/|B|) Σ G_t log π(a_t | s_t)` for stored pre-squash
/// actions.
pub fn reinforce_gradient(
    head: &GaussianHead,
    states: &Array2<f64>,
    pre: &Array2<f64>,
    returns: &[f64],
) -> Result<Vec<f64>> {
    if returns.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let eval = head.evaluate(states.view(), pre.view())?;
    let n = returns.len() as f64;
    let d_log_prob: Vec<f64> = returns.iter().map(|g| -g / n).collect();
    let mut grads = vec![0.0; head.net().params().len()];
    head.score_backward(&eval, &d_log_prob, &vec![0.0; returns.len()], &mut grads)?;
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct ReinforceAgent {
    cfg: AlgoConfig,
    obs_dim: usize,
    action_dim: usize,
    pub actor: GaussianHead,
    opt: Adam,
    episode: Vec<(Vec<f64>, Vec<f64>, f64)>,
    pending: Option<Vec<f64>>,
    rng: Rng,
    stats: UpdateStats,
}

impl ReinforceAgent {
    pub fn new(obs_dim: usize, action_dim: usize, cfg: &AlgoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = agent_rng(seed);
        let actor = GaussianHead::new(obs_dim, &cfg.hidden, action_dim, &mut rng)?;
        Ok(Self {
            obs_dim,
            action_dim,
            opt: Adam::new(actor.net().params().len(), cfg.lr_actor),
            actor,
            episode: Vec::new(),
            pending: None,
            cfg: cfg.clone(),
            rng,
            stats: UpdateStats::default(),
        })
    }

    fn learn(&mut self) -> Result<()> {
        let steps = std::mem::take(&mut self.episode);
        let rewards: Vec<f64> = steps.iter().map(|s| s.2 * self.cfg.reward_scale).collect();
        let returns = discounted_returns(&rewards, self.cfg.gamma);
        let to_matrix = |rows: Vec<&Vec<f64>>| {
            let cols = rows[0].len();
            Array2::from_shape_vec((rows.len(), cols), rows.into_iter().flatten().copied().collect())
                .expect("steps share width")
        };
        let states = to_matrix(steps.iter().map(|s| &s.0).collect());
        let pre = to_matrix(steps.iter().map(|s| &s.1).collect());
        let g = reinforce_gradient(&self.actor, &states, &pre, &returns)?;
        self.opt.step(self.actor.net_mut().params_mut(), &g);
        self.stats.updates += 1;
        self.stats.actor_loss = Some(-returns[0]);
        Ok(())
    }
}

impl Controller for ReinforceAgent {
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
                let (pre, a, _) = self
                    .actor
                    .sample_one(obs, &mut self.rng)
                    .expect("observation width checked by the caller");
                self.pending = Some(pre);
                a
            }
        }
    }

    fn observe(&mut self, transition: &Transition, episode_end: bool) -> Result<()> {
        let pre = self.pending.take().unwrap_or_else(|| {
            transition
                .action
                .iter()
                .map(|a| a.clamp(-1.0 + 1e-6, 1.0 - 1e-6).atanh())
                .collect()
        });
        self.episode.push((transition.state.clone(), pre, transition.reward));
        if episode_end || transition.done {
            self.learn()?;
        }
        Ok(())
    }
}

impl Agent for ReinforceAgent {
    fn algo(&self) -> Algo {
        Algo::Reinforce
    }

    fn params(&self, _scope: Scope) -> ParamVector {
        flatten(&[self.actor.net()])
    }

    fn set_params(&mut self, _scope: Scope, params: &ParamVector) -> Result<()> {
        load_into(params, &mut [self.actor.net_mut()])
    }

    fn reset_optimizers(&mut self) {
        self.opt.reset();
    }

    fn stats(&self) -> UpdateStats {
        self.stats.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BoundedBox, Env, Info, StepResult};
    use ndarray::array;

    #[test]
    fn zero_returns_give_zero_gradient() {
        let mut rng = crate::seeded_rng(0);
        let head = GaussianHead::new(1, &[4], 1, &mut rng).unwrap();
        let g = reinforce_gradient(&head, &array![[0.1], [0.2]], &array![[0.3], [-0.3]], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(reinforce_gradient(&head, &Array2::zeros((0, 1)), &Array2::zeros((0, 1)), &[]).is_err());
    }

    #[test]
    fn rewarded_action_gains_probability() {
        // bandit with two candidate actions; only the positive one is rewarded
        let mut rng = crate::seeded_rng(1);
        let head = GaussianHead::new(1, &[4], 1, &mut rng).unwrap();
        let s = array![[0.0]];
        let good = array![[0.5]];
        let g = reinforce_gradient(&head, &s, &good, &[1.0]).unwrap();
        let lp = |h: &GaussianHead, u: &Array2<f64>| h.evaluate(s.view(), u.view()).unwrap().log_probs[0];
        let mut stepped = head.clone();
        for (p, gi) in stepped.net_mut().params_mut().iter_mut().zip(&g) {
            *p -= 1e-3 * gi;
        }
        assert!(lp(&stepped, &good) > lp(&head, &good));
    }

    /// One-step episodes with reward `-(a - 0.4)²`.
    struct Quadratic {
        bounds: BoundedBox,
    }

    impl Env for Quadratic {
        fn id(&self) -> &str {
            "quadratic"
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            1
        }
        fn episode_length(&self) -> usize {
            1
        }
        fn reset(&mut self, _seed: u64) -> Vec<f64> {
            vec![0.0]
        }
        fn step(&mut self, action: &[f64]) -> Result<StepResult> {
            let a = crate::env::map_action(action, &self.bounds)?[0];
            Ok(StepResult {
                observation: vec![0.0],
                reward: -(a - 0.4).powi(2),
                terminated: false,
                truncated: true,
                info: Info::default(),
            })
        }
    }

    #[test]
    fn learns_quadratic_bandit() {
        let cfg = AlgoConfig {
            hidden: vec![8],
            lr_actor: 1e-2,
            gamma: 0.0,
            ..AlgoConfig::default()
        };
        let mut agent = ReinforceAgent::new(1, 1, &cfg, 0).unwrap();
        let mut env = Quadratic {
            bounds: BoundedBox::unit(1),
        };
        let dist = |a: &ReinforceAgent| (a.actor.mode(&[0.0]).unwrap()[0] - 0.4).abs();
        let before = dist(&agent);
        for ep in 0..500 {
            crate::env::run_episode(&mut env, &mut agent, Mode::Train, ep).unwrap();
        }
        assert!(dist(&agent) < before.min(0.15), "{} -> {}", before, dist(&agent));
    }
}
