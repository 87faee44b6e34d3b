use ndarray::{s, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use super::{Layout, Mlp, Tape};
use crate::{Result, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const JACOBIAN_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian policy squashed through tanh. The network emits the means
/// followed by the log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    net: Mlp,
    action_dim: usize,
}

/// A batch of reparameterised draws with everything needed to
/// differentiate through them.
#[derive(Debug, Clone)]
pub struct Sample {
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    noise: Array2<f64>,
    stats: Stats,
}

#[derive(Debug, Clone)]
struct Stats {
    tape: Tape,
    mean: Array2<f64>,
    log_std: Array2<f64>,
    /// log_std was clamped, so its gradient is zero.
    clamped: Array2<bool>,
}

/// Log-density of stored pre-squash actions, for score-function updates.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_probs: Vec<f64>,
    /// Entropy of the Gaussian before squashing.
    pub entropy: Vec<f64>,
    z: Array2<f64>,
    stats: Stats,
}

fn squash_correction(a: f64) -> f64 {
    (1.0 - a * a + JACOBIAN_EPS).ln()
}

impl GaussianHead {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut Rng) -> Result<Self> {
        let layout = Layout::mlp(obs_dim, hidden, 2 * action_dim)?;
        Ok(Self {
            net: Mlp::new(layout, 0.1, rng),
            action_dim,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let out = net.output_dim();
        if !out.is_multiple_of(2) {
            return Err(crate::Error::LayoutMismatch(format!(
                "gaussian head needs an even output width, got {out}"
            )));
        }
        Ok(Self {
            net,
            action_dim: out / 2,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn stats(&self, obs: ArrayView2<'_, f64>) -> Result<Stats> {
        let tape = self.net.forward_tape(obs)?;
        let out = tape.output();
        let d = self.action_dim;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..]);
        let clamped = raw.mapv(|x| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&x));
        let log_std = raw.mapv(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok(Stats {
            tape,
            mean,
            log_std,
            clamped,
        })
    }

    /// `tanh(μ(s))`.
    pub fn mode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward_one(obs)?;
        Ok(out[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }

    pub fn sample(&self, obs: ArrayView2<'_, f64>, rng: &mut Rng) -> Result<Sample> {
        let stats = self.stats(obs)?;
        let noise = Array2::from_shape_simple_fn(stats.mean.dim(), || StandardNormal.sample(rng));
        let pre = &stats.mean + &(stats.log_std.mapv(f64::exp) * &noise);
        let actions = pre.mapv(f64::tanh);
        let log_probs = (0..actions.nrows())
            .map(|r| {
                (0..self.action_dim)
                    .map(|i| {
                        let e = noise[[r, i]];
                        -0.5 * e * e - stats.log_std[[r, i]] - HALF_LN_2PI - squash_correction(actions[[r, i]])
                    })
                    .sum()
            })
            .collect();
        Ok(Sample {
            actions,
            log_probs,
            noise,
            stats,
        })
    }

    /// Pre-squash draw for a single observation; returns `(u, tanh(u), log π)`.
    pub fn sample_one(&self, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).expect("row view");
        let sample = self.sample(view, rng)?;
        let pre = (&sample.stats.mean + &(sample.stats.log_std.mapv(f64::exp) * &sample.noise))
            .into_raw_vec_and_offset()
            .0;
        Ok((pre, sample.actions.into_raw_vec_and_offset().0, sample.log_probs[0]))
    }

    fn backprop(
        &self,
        stats: &Stats,
        d_mean: Array2<f64>,
        mut d_log_std: Array2<f64>,
        grads: &mut [f64],
    ) -> Result<()> {
        d_log_std.zip_mut_with(&stats.clamped, |g, c| {
            if *c {
                *g = 0.0;
            }
        });
        let d = self.action_dim;
        let mut upstream = Array2::zeros((d_mean.nrows(), 2 * d));
        upstream.slice_mut(s![.., ..d]).assign(&d_mean);
        upstream.slice_mut(s![.., d..]).assign(&d_log_std);
        self.net.backward(&stats.tape, upstream.view(), grads)?;
        Ok(())
    }

    /// Accumulates parameter gradients of a loss with partials `d_action`
    /// (w.r.t. the squashed actions) and `d_log_prob`, holding the noise
    /// fixed.
    pub fn reparam_backward(
        &self,
        sample: &Sample,
        d_action: ArrayView2<'_, f64>,
        d_log_prob: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        let st = &sample.stats;
        let (rows, d) = sample.actions.dim();
        let mut d_mean = Array2::zeros((rows, d));
        let mut d_log_std = Array2::zeros((rows, d));
        for r in 0..rows {
            for i in 0..d {
                let a = sample.actions[[r, i]];
                let one_minus = 1.0 - a * a;
                let jac = 2.0 * a * one_minus / (one_minus + JACOBIAN_EPS);
                let sigma_eps = st.log_std[[r, i]].exp() * sample.noise[[r, i]];
                d_mean[[r, i]] = d_action[[r, i]] * one_minus + d_log_prob[r] * jac;
                d_log_std[[r, i]] = d_action[[r, i]] * one_minus * sigma_eps + d_log_prob[r] * (jac * sigma_eps - 1.0);
            }
        }
        self.backprop(st, d_mean, d_log_std, grads)
    }

    pub fn evaluate(&self, obs: ArrayView2<'_, f64>, pre: ArrayView2<'_, f64>) -> Result<Evaluation> {
        let stats = self.stats(obs)?;
        if pre.dim() != stats.mean.dim() {
            return Err(crate::Error::dim("pre-squash actions", stats.mean.ncols(), pre.ncols()));
        }
        let z = (&pre - &stats.mean) / &stats.log_std.mapv(f64::exp);
        let log_probs = (0..z.nrows())
            .map(|r| {
                (0..self.action_dim)
                    .map(|i| {
                        -0.5 * z[[r, i]].powi(2)
                            - stats.log_std[[r, i]]
                            - HALF_LN_2PI
                            - squash_correction(pre[[r, i]].tanh())
                    })
                    .sum()
            })
            .collect();
        let entropy = stats
            .log_std
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|l| l + 0.5 + HALF_LN_2PI).sum())
            .collect();
        Ok(Evaluation {
            log_probs,
            entropy,
            z,
            stats,
        })
    }

    /// Gradients of a loss with partials w.r.t. the log-probabilities and
    /// entropies from `evaluate`.
    pub fn score_backward(
        &self,
        eval: &Evaluation,
        d_log_prob: &[f64],
        d_entropy: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        let st = &eval.stats;
        let (rows, d) = eval.z.dim();
        let mut d_mean = Array2::zeros((rows, d));
        let mut d_log_std = Array2::zeros((rows, d));
        for r in 0..rows {
            for i in 0..d {
                let z = eval.z[[r, i]];
                d_mean[[r, i]] = d_log_prob[r] * z / st.log_std[[r, i]].exp();
                d_log_std[[r, i]] = d_log_prob[r] * (z * z - 1.0) + d_entropy[r];
            }
        }
        self.backprop(st, d_mean, d_log_std, grads)
    }
}

/// One squashed draw and its log-density.
pub fn sample_squashed(head: &GaussianHead, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    let (_, a, logp) = head.sample_one(obs, rng)?;
    Ok((a, logp))
}
