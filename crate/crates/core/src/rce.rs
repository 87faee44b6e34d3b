//! Single-column radiative–convective model with grey longwave radiation
//! and hard convective adjustment.
//!
//! Levels are ordered top (10 hPa) to bottom (1000 hPa); the surface slab
//! sits below the lowest level. Solar heating is absorbed at the surface
//! only. Convective adjustment treats the surface as the bottom member of
//! the column.

use crate::env::{map_action, BoundedBox, Env, Info, StepResult};
use crate::{Error, Result};

pub const N_LEV: usize = 17;
pub const EPISODE_LENGTH: usize = 500;
pub const LEVELS_HPA: [f64; N_LEV] = [
    10.0, 20.0, 30.0, 50.0, 70.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 500.0, 600.0, 700.0, 850.0, 925.0, 1000.0,
];
pub const SURFACE_PRESSURE_HPA: f64 = 1013.25;
pub const SCALE_HEIGHT_KM: f64 = 7.0;
pub const GRAVITY: f64 = 9.81;
pub const CP_AIR: f64 = 1004.0;
pub const STEFAN_BOLTZMANN: f64 = 5.670374419e-8;
/// 1 m water-equivalent surface slab, J m⁻² K⁻¹.
pub const SURFACE_HEAT_CAPACITY: f64 = 4.18e6;
pub const GAMMA_RANGE: (f64, f64) = (5.5, 9.8);
pub const EMISSIVITY_RANGE: (f64, f64) = (0.0, 1.0);
pub const FAULT_BOUNDS_K: (f64, f64) = (150.0, 340.0);
pub const INITIAL_TEMP_K: f64 = 280.0;
pub const MAX_SWEEPS: usize = 50;
const ADJUST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGrid {
    p_hpa: Vec<f64>,
    z_km: Vec<f64>,
    /// Layer heat capacities `cp Δp / g`, J m⁻² K⁻¹.
    heat_capacity: Vec<f64>,
    /// Fraction of the column mass in each layer.
    mass_fraction: Vec<f64>,
}

impl ColumnGrid {
    pub fn standard() -> Self {
        let p = LEVELS_HPA.to_vec();
        let mut edges = vec![0.0];
        edges.extend(p.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        edges.push(SURFACE_PRESSURE_HPA);
        let dp: Vec<f64> = edges.windows(2).map(|w| (w[1] - w[0]) * 100.0).collect();
        let total: f64 = dp.iter().sum();
        Self {
            z_km: p
                .iter()
                .map(|p| SCALE_HEIGHT_KM * (SURFACE_PRESSURE_HPA / p).ln())
                .collect(),
            heat_capacity: dp.iter().map(|dp| CP_AIR * dp / GRAVITY).collect(),
            mass_fraction: dp.iter().map(|dp| dp / total).collect(),
            p_hpa: p,
        }
    }

    pub fn len(&self) -> usize {
        self.p_hpa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hpa.is_empty()
    }

    pub fn p_hpa(&self) -> &[f64] {
        &self.p_hpa
    }

    pub fn z_km(&self) -> &[f64] {
        &self.z_km
    }

    pub fn heat_capacity(&self) -> &[f64] {
        &self.heat_capacity
    }

    pub fn level_index(&self, p_hpa: f64) -> Option<usize> {
        self.p_hpa.iter().position(|p| (p - p_hpa).abs() < 1e-9)
    }

    /// Heat capacities of the column members including the surface slab.
    fn member_capacities(&self) -> Vec<f64> {
        let mut c = self.heat_capacity.clone();
        c.push(SURFACE_HEAT_CAPACITY);
        c
    }

    /// Heights of the column members; the surface is at z = 0.
    fn member_heights(&self) -> Vec<f64> {
        let mut z = self.z_km.clone();
        z.push(0.0);
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RceParams {
    /// Critical lapse rate for each level pair (level k and the member below
    /// it), °C km⁻¹.
    pub gamma_crit: Vec<f64>,
    pub emissivity: f64,
    pub tau0: f64,
    /// Absorbed solar at the surface, W m⁻².
    pub s_abs: f64,
    pub dt: f64,
}

impl Default for RceParams {
    fn default() -> Self {
        Self {
            gamma_crit: vec![6.5; N_LEV],
            emissivity: 1.0,
            tau0: 4.0,
            s_abs: 240.0,
            dt: 86_400.0,
        }
    }
}

impl RceParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_crit.len() != N_LEV {
            return Err(Error::dim("critical lapse rates", N_LEV, self.gamma_crit.len()));
        }
        if !(0.0..=1.0).contains(&self.emissivity) {
            return Err(Error::Config(format!("emissivity {} outside [0, 1]", self.emissivity)));
        }
        if !(self.tau0 >= 0.0 && self.dt > 0.0) {
            return Err(Error::Config("tau0 must be non-negative and dt positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RceState {
    /// Level temperatures, K.
    pub temps: Vec<f64>,
    pub surface: f64,
    pub t: usize,
}

impl RceState {
    pub fn isothermal(temp: f64) -> Self {
        Self {
            temps: vec![temp; N_LEV],
            surface: temp,
            t: 0,
        }
    }

    fn check(&self) -> Result<()> {
        let (lo, hi) = FAULT_BOUNDS_K;
        if let Some(t) = self
            .temps
            .iter()
            .chain(std::iter::once(&self.surface))
            .find(|t| !(**t > lo && **t < hi))
        {
            return Err(Error::IntegrationFault(format!(
                "column temperature {t} K outside ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Heating rates from the grey two-stream scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiativeTendency {
    /// K s⁻¹ per level.
    pub levels: Vec<f64>,
    /// K s⁻¹.
    pub surface: f64,
    /// Outgoing longwave at the top, W m⁻².
    pub olr: f64,
    /// Absorbed solar minus OLR, W m⁻².
    pub net_toa: f64,
}

pub fn grey_radiative_tendency(state: &RceState, params: &RceParams, grid: &ColumnGrid) -> Result<RadiativeTendency> {
    state.check()?;
    let n = grid.len();
    let emis: Vec<f64> = grid
        .mass_fraction
        .iter()
        .map(|f| 1.0 - (-params.tau0 * f).exp())
        .collect();
    let source: Vec<f64> = state.temps.iter().map(|t| STEFAN_BOLTZMANN * t.powi(4)).collect();
    // Interface i sits above level i; interface n is the surface.
    let mut down = vec![0.0; n + 1];
    for k in 0..n {
        down[k + 1] = down[k] * (1.0 - emis[k]) + emis[k] * source[k];
    }
    let es = params.emissivity;
    let mut up = vec![0.0; n + 1];
    up[n] = es * STEFAN_BOLTZMANN * state.surface.powi(4) + (1.0 - es) * down[n];
    for k in (0..n).rev() {
        up[k] = up[k + 1] * (1.0 - emis[k]) + emis[k] * source[k];
    }
    let net: Vec<f64> = up.iter().zip(&down).map(|(u, d)| u - d).collect();
    let levels = (0..n).map(|k| (net[k + 1] - net[k]) / grid.heat_capacity[k]).collect();
    Ok(RadiativeTendency {
        levels,
        surface: (params.s_abs - net[n]) / SURFACE_HEAT_CAPACITY,
        olr: up[0],
        net_toa: params.s_abs - up[0],
    })
}

/// Removes super-critical lapse rates while conserving `Σ C T` over each
/// adjusted slab. Works on `θ = T - c`, where `c` is the critical profile
/// accumulated from the top; the column is stable exactly when `θ` does not
/// increase downward, and adjusting a slab sets its `θ` to the
/// capacity-weighted mean.
pub fn convective_adjustment(
    temps: &[f64],
    surface: f64,
    gamma_crit: &[f64],
    grid: &ColumnGrid,
) -> Result<(Vec<f64>, f64)> {
    let n = grid.len();
    if temps.len() != n {
        return Err(Error::dim("column temperatures", n, temps.len()));
    }
    if gamma_crit.len() != n {
        return Err(Error::dim("critical lapse rates", n, gamma_crit.len()));
    }
    let cap = grid.member_capacities();
    let z = grid.member_heights();
    let mut offset = vec![0.0; n + 1];
    for m in 0..n {
        offset[m + 1] = offset[m] + gamma_crit[m] * (z[m] - z[m + 1]);
    }
    let mut theta: Vec<f64> = temps
        .iter()
        .chain(std::iter::once(&surface))
        .zip(&offset)
        .map(|(t, c)| t - c)
        .collect();
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::IntegrationFault("non-finite column temperature".into()));
    }

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if theta.windows(2).all(|w| w[1] - w[0] <= ADJUST_TOL) {
            converged = true;
            break;
        }
        // One top-down sweep: grow each slab while the next member is
        // unstable relative to the slab mean, then homogenise it.
        let mut start = 0;
        while start <= n {
            let mut end = start;
            let mut heat = cap[start] * theta[start];
            let mut weight = cap[start];
            while end < n && theta[end + 1] - heat / weight > ADJUST_TOL {
                end += 1;
                heat += cap[end] * theta[end];
                weight += cap[end];
            }
            if end > start {
                let mean = heat / weight;
                theta[start..=end].iter_mut().for_each(|t| *t = mean);
            }
            start = end + 1;
        }
    }
    if !converged {
        return Err(Error::AdjustmentFault(MAX_SWEEPS));
    }
    let mut adjusted: Vec<f64> = theta.iter().zip(&offset).map(|(t, c)| t + c).collect();
    let surface = adjusted.pop().expect("column has a surface member");
    Ok((adjusted, surface))
}

/// `Σ C T` over levels and surface, J m⁻².
pub fn column_enthalpy(temps: &[f64], surface: f64, grid: &ColumnGrid) -> f64 {
    temps.iter().zip(&grid.heat_capacity).map(|(t, c)| t * c).sum::<f64>() + SURFACE_HEAT_CAPACITY * surface
}

/// Explicit radiative step followed by convective adjustment.
pub fn rce_step(state: &RceState, params: &RceParams, grid: &ColumnGrid) -> Result<RceState> {
    params.validate()?;
    let tend = grey_radiative_tendency(state, params, grid)?;
    let temps: Vec<f64> = state
        .temps
        .iter()
        .zip(&tend.levels)
        .map(|(t, r)| t + params.dt * r)
        .collect();
    let surface = state.surface + params.dt * tend.surface;
    let (temps, surface) = convective_adjustment(&temps, surface, &params.gamma_crit, grid)?;
    let next = RceState {
        temps,
        surface,
        t: state.t + 1,
    };
    next.check()?;
    Ok(next)
}

/// Integrates from an isothermal start until the largest per-step change
/// falls below `tol` K.
pub fn spin_up(params: &RceParams, grid: &ColumnGrid, tol: f64, max_steps: usize) -> Result<RceState> {
    let mut state = RceState::isothermal(INITIAL_TEMP_K);
    for _ in 0..max_steps {
        let next = rce_step(&state, params, grid)?;
        let change = next
            .temps
            .iter()
            .zip(&state.temps)
            .map(|(a, b)| (a - b).abs())
            .fold((next.surface - state.surface).abs(), f64::max);
        state = next;
        if change < tol {
            return Ok(state);
        }
    }
    Err(Error::IntegrationFault(format!(
        "column did not equilibrate within {max_steps} steps"
    )))
}

/// `-(1/17) Σ (T - T_ref)²`.
pub fn rce_reward(temps: &[f64], reference: &[f64]) -> Result<f64> {
    if temps.len() != reference.len() || temps.is_empty() {
        return Err(Error::dim("temperature profile", reference.len(), temps.len()));
    }
    Ok(-temps.iter().zip(reference).map(|(t, r)| (t - r).powi(2)).sum::<f64>() / temps.len() as f64)
}

pub const DIAGNOSTIC_LEVELS_HPA: [f64; 3] = [100.0, 200.0, 1000.0];

/// Absolute error at each requested pressure level.
pub fn mae_at_levels(temps: &[f64], reference: &[f64], levels_hpa: &[f64], grid: &ColumnGrid) -> Result<Vec<f64>> {
    if temps.len() != grid.len() || reference.len() != grid.len() {
        return Err(Error::dim(
            "temperature profile",
            grid.len(),
            temps.len().min(reference.len()),
        ));
    }
    levels_hpa
        .iter()
        .map(|p| {
            grid.level_index(*p)
                .map(|k| (temps[k] - reference[k]).abs())
                .ok_or_else(|| Error::Config(format!("no {p} hPa level in column grid")))
        })
        .collect()
}

/// Reference temperature profile on the column levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProfile {
    pub temps: Vec<f64>,
    pub provenance: String,
}

impl ReferenceProfile {
    pub fn new(temps: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if temps.len() != N_LEV {
            return Err(Error::dim("reference profile", N_LEV, temps.len()));
        }
        if temps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("reference profile contains non-finite values".into()));
        }
        Ok(Self {
            temps,
            provenance: provenance.into(),
        })
    }

    /// Equilibrium of the grey column at Γcrit = 6.5 with perturbed
    /// radiative constants (τ0 = 4.4, S_abs = 244 W m⁻², ε = 0.95).
    pub fn synthetic() -> Self {
        let params = RceParams {
            tau0: 4.4,
            s_abs: 244.0,
            emissivity: 0.95,
            ..RceParams::default()
        };
        let state = spin_up(&params, &ColumnGrid::standard(), 1e-9, 200_000).expect("reference column equilibrates");
        Self {
            temps: state.temps,
            provenance: "synthetic: grey column equilibrium, gamma = 6.5, tau0 = 4.4, S_abs = 244, emissivity = 0.95"
                .into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RceVariant {
    /// `[emissivity, Γcrit]`.
    V0,
    /// One Γcrit per level; emissivity fixed at 1.
    V17,
}

#[derive(Debug, Clone)]
pub struct RceEnv {
    id: String,
    variant: RceVariant,
    grid: ColumnGrid,
    base: RceParams,
    bounds: BoundedBox,
    reference: ReferenceProfile,
    state: Option<RceState>,
}

impl RceEnv {
    pub fn new(variant: RceVariant, reference: ReferenceProfile) -> Result<Self> {
        let bounds = match variant {
            RceVariant::V0 => BoundedBox::new(
                vec![EMISSIVITY_RANGE.0, GAMMA_RANGE.0],
                vec![EMISSIVITY_RANGE.1, GAMMA_RANGE.1],
            )?,
            RceVariant::V17 => BoundedBox::uniform(GAMMA_RANGE.0, GAMMA_RANGE.1, N_LEV)?,
        };
        Ok(Self {
            id: match variant {
                RceVariant::V0 => "rce-v0".into(),
                RceVariant::V17 => "rce17-v0".into(),
            },
            variant,
            grid: ColumnGrid::standard(),
            base: RceParams::default(),
            bounds,
            reference,
            state: None,
        })
    }

    pub fn state(&self) -> Option<&RceState> {
        self.state.as_ref()
    }

    pub fn reference(&self) -> &ReferenceProfile {
        &self.reference
    }

    pub fn grid(&self) -> &ColumnGrid {
        &self.grid
    }

    fn observe(state: &RceState) -> Vec<f64> {
        state.temps.iter().map(|t| crate::scbc::normalize_temp(*t)).collect()
    }
}

impl Env for RceEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn obs_dim(&self) -> usize {
        N_LEV
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn episode_length(&self) -> usize {
        EPISODE_LENGTH
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        let state = RceState::isothermal(INITIAL_TEMP_K);
        let obs = Self::observe(&state);
        self.state = Some(state);
        obs
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let state = self.state.as_ref().ok_or(Error::NotReset)?;
        let physical = map_action(action, &self.bounds)?;
        let mut params = self.base.clone();
        match self.variant {
            RceVariant::V0 => {
                params.emissivity = physical[0];
                params.gamma_crit = vec![physical[1]; N_LEV];
            }
            RceVariant::V17 => params.gamma_crit.copy_from_slice(&physical),
        }
        let next = rce_step(state, &params, &self.grid)?;
        let reward = rce_reward(&next.temps, &self.reference.temps)?;
        let mut info = Info {
            params: physical,
            ..Info::default()
        };
        info.values.insert("surface_k".into(), next.surface);
        let obs = Self::observe(&next);
        let truncated = next.t >= EPISODE_LENGTH;
        self.state = Some(next);
        Ok(StepResult {
            observation: obs,
            reward,
            terminated: false,
            truncated,
            info,
        })
    }
}
