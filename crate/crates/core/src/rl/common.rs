use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use crate::env::Transition;
use crate::nn::{Layout, Mlp, Tape};
use crate::{Result, Rng};

/// A minibatch laid out row-wise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    /// Rewards are multiplied by `reward_scale`.
    pub fn from_transitions(items: &[&Transition], reward_scale: f64) -> Self {
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            let cols = items.first().map(|t| f(t).len()).unwrap_or(0);
            Array2::from_shape_vec(
                (items.len(), cols),
                items.iter().flat_map(|t| f(t).iter().copied()).collect(),
            )
            .expect("transitions share dimensions")
        };
        Self {
            states: rows(&|t| &t.state),
            actions: rows(&|t| &t.action),
            rewards: items.iter().map(|t| t.reward * reward_scale).collect(),
            next_states: rows(&|t| &t.next_state),
            dones: items.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row view")
}

pub fn state_action(states: &ArrayView2<'_, f64>, actions: &ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate![Axis(1), *states, *actions]
}

/// `y = r + γ (1 − d) next`.
pub fn td_targets(rewards: &[f64], dones: &[bool], next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(next)
        .map(|((r, d), q)| r + if *d { 0.0 } else { gamma * q })
        .collect()
}

/// Scalar-output critic `Q(s, a)`.
pub fn q_values(critic: &Mlp, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    Ok(critic
        .forward(state_action(&states, &actions).view())?
        .into_raw_vec_and_offset()
        .0)
}

/// One Adam-free pass of the squared loss `mean (Q − y)²`; returns the loss
/// and adds gradients into `grads`.
pub fn critic_mse_grads(
    critic: &Mlp,
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    targets: &[f64],
    grads: &mut [f64],
) -> Result<f64> {
    let tape = critic.forward_tape(state_action(&states, &actions).view())?;
    let n = targets.len() as f64;
    let q = tape.output().column(0);
    let loss = q.iter().zip(targets).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / n;
    let upstream = Array2::from_shape_fn((targets.len(), 1), |(i, _)| 2.0 * (q[i] - targets[i]) / n);
    critic.backward(&tape, upstream.view(), grads)?;
    Ok(loss)
}

/// ∂Q/∂a for each row given ∂L/∂Q rows (`upstream`); the input gradient's
/// action columns.
pub fn action_gradient(
    critic: &Mlp,
    tape: &Tape,
    upstream: ArrayView2<'_, f64>,
    obs_dim: usize,
) -> Result<Array2<f64>> {
    let mut scratch = vec![0.0; critic.params().len()];
    let dx = critic.backward(tape, upstream, &mut scratch)?;
    Ok(dx.slice(s![.., obs_dim..]).to_owned())
}

/// Deterministic policy `tanh(f(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhActor {
    pub net: Mlp,
}

impl TanhActor {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(Layout::mlp(obs_dim, hidden, action_dim)?, 0.1, rng),
        })
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward_one(obs)?.into_iter().map(f64::tanh).collect())
    }

    pub fn forward(&self, states: ArrayView2<'_, f64>) -> Result<(Tape, Array2<f64>)> {
        let tape = self.net.forward_tape(states)?;
        let actions = tape.output().mapv(f64::tanh);
        Ok((tape, actions))
    }

    /// Adds gradients of a loss with partials `d_actions` w.r.t. the
    /// squashed actions.
    pub fn backward(
        &self,
        tape: &Tape,
        actions: &Array2<f64>,
        d_actions: &Array2<f64>,
        grads: &mut [f64],
    ) -> Result<()> {
        let upstream = d_actions * &actions.mapv(|a| 1.0 - a * a);
        self.net.backward(tape, upstream.view(), grads)?;
        Ok(())
    }
}

/// Adds `N(0, σ)` to each component and clamps to `[-1, 1]`.
pub fn explore(action: &mut [f64], sigma: f64, rng: &mut Rng) {
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        for a in action.iter_mut() {
            *a = (*a + noise.sample(rng)).clamp(-1.0, 1.0);
        }
    }
}

pub fn uniform_action(dim: usize, rng: &mut Rng) -> Vec<f64> {
    use rand::Rng as _;
    (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Mean of a slice, zero when empty.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn batch_layout() {
        let t = Transition {
            state: vec![1.0, 2.0],
            action: vec![0.5],
            reward: 3.0,
            next_state: vec![4.0, 5.0],
            done: true,
        };
        let b = Batch::from_transitions(&[&t, &t], 0.1);
        assert_eq!(b.states, array![[1.0, 2.0], [1.0, 2.0]]);
        assert_eq!(b.actions.dim(), (2, 1));
        assert!((b.rewards[0] - 0.3).abs() < 1e-15);
        assert_eq!(b.dones, vec![true, true]);
    }

    #[test]
    fn done_removes_bootstrap() {
        assert_eq!(
            td_targets(&[1.0, 1.0], &[false, true], &[2.0, 2.0], 0.5),
            vec![2.0, 1.0]
        );
    }

    #[test]
    fn tanh_actor_gradient_matches_finite_differences() {
        let mut rng = crate::seeded_rng(3);
        let actor = TanhActor::new(3, &[5], 2, &mut rng).unwrap();
        let s = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
        let w = array![[0.3, -0.7], [1.1, 0.4]];
        let loss = |a: &TanhActor| (a.forward(s.view()).unwrap().1 * &w).sum();
        let (tape, acts) = actor.forward(s.view()).unwrap();
        let mut g = vec![0.0; actor.net.params().len()];
        actor.backward(&tape, &acts, &w, &mut g).unwrap();
        for i in 0..g.len() {
            let mut p = actor.clone();
            p.net.params_mut()[i] += 1e-5;
            let mut m = actor.clone();
            m.net.params_mut()[i] -= 1e-5;
            let fd = (loss(&p) - loss(&m)) / 2e-5;
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }
}
