//! Environment contract shared by every testbed.
//!
//! Environments follow the familiar reset/step protocol: actions arrive as
//! raw vectors in `[-1, 1]^d`, are clamped, and are mapped affinely onto the
//! physical parameter box of the testbed. Episodes never terminate early;
//! they are truncated at a fixed length.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Axis-aligned box of physical parameter bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundedBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::Empty("bounded box"));
        }
        if lo.len() != hi.len() {
            return Err(Error::dim("bounded box", lo.len(), hi.len()));
        }
        if let Some(i) = (0..lo.len()).find(|&i| lo[i].partial_cmp(&hi[i]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::Config(format!(
                "bound {i}: lo {} must be below hi {}",
                lo[i], hi[i]
            )));
        }
        Ok(Self { lo, hi })
    }

    /// `dim` copies of the same interval.
    pub fn uniform(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The symmetric unit box every policy acts in.
    pub fn unit(dim: usize) -> Self {
        Self::uniform(-1.0, 1.0, dim).expect("unit box is valid")
    }

    /// Concatenates boxes in order.
    pub fn concat(parts: &[&BoundedBox]) -> Result<Self> {
        let lo = parts.iter().flat_map(|b| b.lo.iter().copied()).collect();
        let hi = parts.iter().flat_map(|b| b.hi.iter().copied()).collect();
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Position of a physical vector on the `[0, 1]` scale of this box.
    pub fn normalise(&self, physical: &[f64]) -> Vec<f64> {
        physical
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Maps a raw action in `[-1, 1]^d` onto `bounds`. Out-of-range entries are
/// clamped first, so the result always lies inside the box.
pub fn map_action(raw: &[f64], bounds: &BoundedBox) -> Result<Vec<f64>> {
    if raw.len() != bounds.dim() {
        return Err(Error::dim("action", bounds.dim(), raw.len()));
    }
    Ok(raw
        .iter()
        .zip(bounds.lo.iter().zip(&bounds.hi))
        .map(|(r, (lo, hi))| {
            let r = if r.is_nan() { 0.0 } else { r.clamp(-1.0, 1.0) };
            (lo + (r + 1.0) * 0.5 * (hi - lo)).clamp(*lo, *hi)
        })
        .collect())
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Info {
    /// Physical parameters applied during the step.
    pub params: Vec<f64>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: Info,
}

/// Episode length and total training budget, both in environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    length: usize,
    total_steps: usize,
}

impl EpisodeSpec {
    pub fn new(length: usize, total_steps: usize) -> Result<Self> {
        if length == 0 || total_steps == 0 {
            return Err(Error::Config("episode length and budget must be positive".into()));
        }
        if !total_steps.is_multiple_of(length) {
            return Err(Error::Config(format!(
                "total steps {total_steps} is not a multiple of episode length {length}"
            )));
        }
        Ok(Self { length, total_steps })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn episodes(&self) -> usize {
        self.total_steps / self.length
    }
}

/// One `(s, a, r, s', d)` tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Reset/step protocol implemented by every testbed.
pub trait Env: Send {
    fn id(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn episode_length(&self) -> usize;
    /// Returns the initial observation. Identical seeds give identical
    /// trajectories under identical actions.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one model step. `action` is in raw `[-1, 1]` units.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn episode_length(&self) -> usize {
        (**self).episode_length()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        (**self).step(action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Anything that picks actions: a learning agent or a fixed rule.
pub trait Controller {
    fn action_dim(&self) -> usize;
    /// Expected observation width, when the controller cares.
    fn obs_dim(&self) -> Option<usize> {
        None
    }
    fn act(&mut self, obs: &[f64], mode: Mode) -> Vec<f64>;
    /// Called once per step in training mode only. `episode_end` marks the
    /// final (truncated) step of an episode.
    fn observe(&mut self, _transition: &Transition, _episode_end: bool) -> Result<()> {
        Ok(())
    }
}

/// A controller that always emits the same raw action.
#[derive(Debug, Clone)]
pub struct ConstantController(pub Vec<f64>);

impl Controller for ConstantController {
    fn action_dim(&self) -> usize {
        self.0.len()
    }
    fn act(&mut self, _obs: &[f64], _mode: Mode) -> Vec<f64> {
        self.0.clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub infos: Vec<Info>,
    /// Undiscounted sum of rewards.
    pub episodic_return: f64,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }
}

/// Runs one full episode. In [`Mode::Infer`] the controller is never shown
/// transitions, so nothing it owns can learn.
pub fn run_episode<E: Env + ?Sized, C: Controller + ?Sized>(
    env: &mut E,
    controller: &mut C,
    mode: Mode,
    seed: u64,
) -> Result<Episode> {
    if controller.action_dim() != env.action_dim() {
        return Err(Error::dim(
            "controller action",
            env.action_dim(),
            controller.action_dim(),
        ));
    }
    if let Some(n) = controller.obs_dim().filter(|n| *n != env.obs_dim()) {
        return Err(Error::dim("controller observation", env.obs_dim(), n));
    }
    let mut obs = env.reset(seed);
    let mut episode = Episode::default();
    loop {
        let action = controller.act(&obs, mode);
        let step = env.step(&action)?;
        let end = step.terminated || step.truncated;
        let transition = Transition {
            state: std::mem::take(&mut obs),
            action,
            reward: step.reward,
            next_state: step.observation.clone(),
            done: step.terminated,
        };
        if mode == Mode::Train {
            controller.observe(&transition, end)?;
        }
        episode.episodic_return += step.reward;
        episode.transitions.push(transition);
        episode.infos.push(step.info);
        obs = step.observation;
        if end {
            return Ok(episode);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_action_table_examples() {
        let a = BoundedBox::uniform(140.0, 420.0, 1).unwrap();
        assert_eq!(map_action(&[-1.0], &a).unwrap(), vec![140.0]);
        let b = BoundedBox::uniform(1.95, 2.05, 1).unwrap();
        assert!((map_action(&[0.0], &b).unwrap()[0] - 2.0).abs() < 1e-12);
        let g = BoundedBox::uniform(5.5, 9.8, 1).unwrap();
        assert_eq!(map_action(&[1.0], &g).unwrap(), vec![9.8]);
    }

    #[test]
    fn out_of_range_actions_are_clamped() {
        let b = BoundedBox::uniform(0.0, 10.0, 3).unwrap();
        let out = map_action(&[-3.0, 1.5, f64::NAN], &b).unwrap();
        assert_eq!(out, vec![0.0, 10.0, 5.0]);
        assert!(b.contains(&out));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let b = BoundedBox::unit(2);
        assert!(matches!(map_action(&[0.0], &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_boxes_and_specs() {
        assert!(BoundedBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoundedBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(EpisodeSpec::new(200, 60_000).is_ok());
        assert!(EpisodeSpec::new(200, 60_100).is_err());
        assert_eq!(EpisodeSpec::new(500, 10_000).unwrap().episodes(), 20);
    }

    #[test]
    fn normalised_scale_matches_lapse_rate_reading() {
        let g = BoundedBox::uniform(5.5, 9.8, 1).unwrap();
        let x = g.normalise(&[6.5])[0];
        assert!((x - 0.2326).abs() < 1e-4);
    }

    proptest::proptest! {
        #[test]
        fn mapped_actions_stay_in_box(raw in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let b = BoundedBox::new(vec![140.0, 1.95, 0.3, -2.0], vec![420.0, 2.05, 0.4, 7.0]).unwrap();
            let out = map_action(&raw, &b).unwrap();
            proptest::prop_assert!(b.contains(&out));
        }
    }
}
