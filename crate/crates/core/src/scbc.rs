//! Simple climate bias correction testbed: a scalar temperature relaxed
//! toward a physics attractor, optionally nudged toward observations, plus
//! an additive heating control chosen by the agent.

use rand::Rng as _;

use crate::env::{BoundedBox, Env, Info, StepResult};
use crate::{Error, Result};

pub const FREEZING_POINT_K: f64 = 273.15;
pub const EPISODE_LENGTH: usize = 200;
/// Half-width of the uniform perturbation of the initial state, normalised units.
pub const INITIAL_SPREAD: f64 = 0.05;

/// `(T - 273.15) / 100`.
pub fn normalize_temp(kelvin: f64) -> f64 {
    (kelvin - FREEZING_POINT_K) / 100.0
}

pub fn denormalize_temp(normalised: f64) -> f64 {
    normalised * 100.0 + FREEZING_POINT_K
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Bias correction on, reward penalises the correction applied.
    V0,
    /// Bias correction off, dense squared-error reward.
    V1,
    /// As `V1` but the reward is only informative every fifth step.
    V2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::V0 => "v0",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScbcParams {
    pub eps1: f64,
    pub eps2: f64,
    pub t_physics_k: f64,
    pub t_observed_k: f64,
    pub variant: Variant,
}

impl ScbcParams {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            eps1: 0.2,
            eps2: if variant == Variant::V0 { 0.1 } else { 0.0 },
            t_physics_k: 380.0,
            t_observed_k: 321.75,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps1) || !(0.0..=1.0).contains(&self.eps2) {
            return Err(Error::Config("eps1 and eps2 must lie in [0, 1]".into()));
        }
        if self.t_physics_k == self.t_observed_k {
            return Err(Error::Config("T_physics must differ from T_observed".into()));
        }
        Ok(())
    }

    pub fn t_physics(&self) -> f64 {
        normalize_temp(self.t_physics_k)
    }

    pub fn t_observed(&self) -> f64 {
        normalize_temp(self.t_observed_k)
    }

    fn gap(&self) -> f64 {
        self.t_physics() - self.t_observed()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScbcState {
    /// Normalised temperature.
    pub temp: f64,
    pub t: usize,
}

/// Intermediate values of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScbcChain {
    pub relaxed: f64,
    pub corrected: f64,
    pub new: f64,
}

pub fn scbc_chain(temp: f64, u: f64, params: &ScbcParams) -> ScbcChain {
    let tp = params.t_physics();
    let to = params.t_observed();
    let gap = params.gap();
    let relaxed = temp + params.eps1 * (tp - temp) / gap;
    let corrected = relaxed + params.eps2 * (to - relaxed) / gap;
    ScbcChain {
        relaxed,
        corrected,
        new: corrected + u,
    }
}

pub fn scbc_step(state: ScbcState, u: f64, params: &ScbcParams) -> ScbcState {
    ScbcState {
        temp: scbc_chain(state.temp, u, params).new,
        t: state.t + 1,
    }
}

/// Reward for the state `temp_new` reached at step index `t`.
pub fn scbc_reward(params: &ScbcParams, temp_new: f64, t: usize) -> f64 {
    let to = params.t_observed();
    match params.variant {
        Variant::V0 => {
            let correction = (to - temp_new) / params.gap() * params.eps2;
            -correction * correction
        }
        Variant::V1 => -(to - temp_new).powi(2),
        Variant::V2 => {
            if t.is_multiple_of(5) {
                -(to - temp_new).powi(2)
            } else {
                -1.0
            }
        }
    }
}

/// Gym-style wrapper. Observation is `[normalised T]`; the single action is
/// the heating increment `u` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ScbcEnv {
    id: String,
    params: ScbcParams,
    bounds: BoundedBox,
    state: Option<ScbcState>,
}

impl ScbcEnv {
    pub fn new(params: ScbcParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            id: format!("scbc-{}", params.variant.name()),
            params,
            bounds: BoundedBox::unit(1),
            state: None,
        })
    }

    pub fn variant(variant: Variant) -> Self {
        Self::new(ScbcParams::for_variant(variant)).expect("default parameters are valid")
    }

    pub fn params(&self) -> &ScbcParams {
        &self.params
    }

    pub fn state(&self) -> Option<ScbcState> {
        self.state
    }

    /// Starts from an explicit normalised temperature instead of a seeded one.
    pub fn reset_to(&mut self, temp: f64) -> Vec<f64> {
        self.state = Some(ScbcState { temp, t: 0 });
        vec![temp]
    }
}

impl Env for ScbcEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn episode_length(&self) -> usize {
        EPISODE_LENGTH
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = crate::seeded_rng(seed);
        let temp = self.params.t_observed() + rng.random_range(-INITIAL_SPREAD..=INITIAL_SPREAD);
        self.reset_to(temp)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let state = self.state.ok_or(Error::NotReset)?;
        let u = crate::env::map_action(action, &self.bounds)?[0];
        let next = scbc_step(state, u, &self.params);
        let reward = scbc_reward(&self.params, next.temp, next.t);
        self.state = Some(next);
        let mut info = Info {
            params: vec![u],
            ..Info::default()
        };
        info.values.insert("temp_k".into(), denormalize_temp(next.temp));
        Ok(StepResult {
            observation: vec![next.temp],
            reward,
            terminated: false,
            truncated: next.t >= EPISODE_LENGTH,
            info,
        })
    }
}
