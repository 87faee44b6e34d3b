//! Zonal-mean Budyko–Sellers energy balance model on 96 latitude bands.
//!
//! ```text
//! C dT/dt = (1 - α) Q - (A + B T) + D / cosφ ∂φ(cosφ ∂φ T)
//! ```
//!
//! Radiative terms are stepped explicitly; the diffusion operator is applied
//! implicitly (backward Euler), which keeps the 30-day environment step
//! stable at any diffusivity.

use std::ops::Range;

use crate::env::{map_action, BoundedBox, Env, Info, StepResult};
use crate::{Error, Result};

pub const N_LAT: usize = 96;
pub const EPISODE_LENGTH: usize = 200;
pub const INITIAL_TEMP_C: f64 = 50.0;
/// Temperatures beyond this magnitude (°C) are treated as a blown-up integration.
pub const FAULT_BOUND_C: f64 = 200.0;
pub const OBS_SCALE: f64 = 0.01;

pub const A_RANGE: (f64, f64) = (140.0, 420.0);
pub const B_RANGE: (f64, f64) = (1.95, 2.05);
pub const ALPHA0_RANGE: (f64, f64) = (0.3, 0.4);
pub const ALPHA2_RANGE: (f64, f64) = (0.2, 0.3);
pub const D_RANGE: (f64, f64) = (0.55, 0.65);

/// Second Legendre polynomial.
pub fn p2(x: f64) -> f64 {
    0.5 * (3.0 * x * x - 1.0)
}

/// Uniform latitude grid with cell centres at `-90 + (j + 0.5) * 180 / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatGrid {
    centers_deg: Vec<f64>,
    cos_centers: Vec<f64>,
    /// cos φ at the `n - 1` interior cell edges.
    cos_edges: Vec<f64>,
    weights: Vec<f64>,
    dphi: f64,
}

impl LatGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "latitude grid needs at least two bands");
        let step = 180.0 / n as f64;
        let centers_deg: Vec<f64> = (0..n).map(|j| -90.0 + (j as f64 + 0.5) * step).collect();
        let cos_centers: Vec<f64> = centers_deg.iter().map(|p| p.to_radians().cos()).collect();
        let cos_edges = (1..n).map(|j| (-90.0 + j as f64 * step).to_radians().cos()).collect();
        let total: f64 = cos_centers.iter().sum();
        let weights = cos_centers.iter().map(|c| c / total).collect();
        Self {
            centers_deg,
            cos_centers,
            cos_edges,
            weights,
            dphi: std::f64::consts::PI / n as f64,
        }
    }

    pub fn standard() -> Self {
        Self::new(N_LAT)
    }

    pub fn len(&self) -> usize {
        self.centers_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_deg.is_empty()
    }

    pub fn centers_deg(&self) -> &[f64] {
        &self.centers_deg
    }

    pub fn cos_centers(&self) -> &[f64] {
        &self.cos_centers
    }

    /// cos φ weights normalised to sum to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cell width in radians.
    pub fn dphi(&self) -> f64 {
        self.dphi
    }

    fn sin_centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.centers_deg.iter().map(|p| p.to_radians().sin())
    }
}

/// Annual-mean insolation, `S0/4 (1 + s2 P2(sin φ))`.
pub fn insolation(grid: &LatGrid, s0: f64, s2: f64) -> Vec<f64> {
    grid.sin_centers().map(|s| 0.25 * s0 * (1.0 + s2 * p2(s))).collect()
}

/// `α0 + α2 P2(sin φ)` clamped to `[0, 0.95]`.
pub fn albedo(grid: &LatGrid, alpha0: f64, alpha2: f64) -> Vec<f64> {
    grid.sin_centers()
        .map(|s| (alpha0 + alpha2 * p2(s)).clamp(0.0, 0.95))
        .collect()
}

pub fn olr(temps: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    temps.iter().zip(a.iter().zip(b)).map(|(t, (a, b))| a + b * t).collect()
}

/// Finite-volume meridional diffusion tendency in W m⁻². Edge fluxes vanish
/// at both poles.
pub fn diffusion(temps: &[f64], d: f64, grid: &LatGrid) -> Vec<f64> {
    let n = grid.len();
    assert_eq!(temps.len(), n, "temperature field does not match grid");
    let dphi = grid.dphi;
    let flux = |j: usize| d * grid.cos_edges[j] * (temps[j + 1] - temps[j]) / dphi;
    (0..n)
        .map(|j| {
            let upper = if j + 1 < n { flux(j) } else { 0.0 };
            let lower = if j > 0 { flux(j - 1) } else { 0.0 };
            (upper - lower) / (grid.cos_centers[j] * dphi)
        })
        .collect()
}

/// Tridiagonal coefficients `(sub, diag, sup)` of the diffusion operator.
fn diffusion_bands(d: f64, grid: &LatGrid) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let dphi2 = grid.dphi * grid.dphi;
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for j in 0..n {
        let scale = d / (grid.cos_centers[j] * dphi2);
        if j > 0 {
            sub[j] = scale * grid.cos_edges[j - 1];
        }
        if j + 1 < n {
            sup[j] = scale * grid.cos_edges[j];
        }
    }
    let diag = sub.iter().zip(&sup).map(|(a, c)| -(a + c)).collect();
    (sub, diag, sup)
}

/// Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = sup[0] / denom;
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmParams {
    /// OLR intercept per band, W m⁻².
    pub a: Vec<f64>,
    /// OLR slope per band, W m⁻² °C⁻¹.
    pub b: Vec<f64>,
    pub alpha0: f64,
    pub alpha2: f64,
    /// Diffusivity, W m⁻² °C⁻¹.
    pub d: f64,
    /// Heat capacity, J m⁻² K⁻¹ (10 m mixed layer).
    pub heat_capacity: f64,
    pub s0: f64,
    pub s2: f64,
    /// Seconds per environment step.
    pub dt: f64,
}

impl EbmParams {
    pub fn canonical() -> Self {
        Self::with_scalars(210.0, 2.0, 0.354, 0.25, 0.6)
    }

    pub fn with_scalars(a: f64, b: f64, alpha0: f64, alpha2: f64, d: f64) -> Self {
        Self {
            a: vec![a; N_LAT],
            b: vec![b; N_LAT],
            alpha0,
            alpha2,
            d,
            heat_capacity: 4.18e7,
            s0: 1365.0,
            s2: -0.48,
            dt: 2.592e6,
        }
    }

    pub fn validate(&self, grid: &LatGrid) -> Result<()> {
        if self.a.len() != grid.len() {
            return Err(Error::dim("OLR intercept field", grid.len(), self.a.len()));
        }
        if self.b.len() != grid.len() {
            return Err(Error::dim("OLR slope field", grid.len(), self.b.len()));
        }
        if !(self.heat_capacity > 0.0 && self.s0 > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("heat capacity, S0 and dt must be positive".into()));
        }
        Ok(())
    }

    /// Absorbed shortwave `(1 - α) Q` per band.
    pub fn absorbed_shortwave(&self, grid: &LatGrid) -> Vec<f64> {
        insolation(grid, self.s0, self.s2)
            .iter()
            .zip(albedo(grid, self.alpha0, self.alpha2))
            .map(|(q, a)| (1.0 - a) * q)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EbmState {
    /// Surface temperature per band, °C.
    pub temps: Vec<f64>,
    pub t: usize,
}

impl EbmState {
    pub fn isothermal(temp: f64, grid: &LatGrid) -> Self {
        Self {
            temps: vec![temp; grid.len()],
            t: 0,
        }
    }
}

/// Radiative tendency `(1 - α) Q - (A + B T)` in W m⁻².
pub fn radiative_forcing(temps: &[f64], params: &EbmParams, grid: &LatGrid) -> Vec<f64> {
    params
        .absorbed_shortwave(grid)
        .iter()
        .zip(olr(temps, &params.a, &params.b))
        .map(|(sw, lw)| sw - lw)
        .collect()
}

/// One environment step: explicit radiation, implicit diffusion.
pub fn ebm_step(state: &EbmState, params: &EbmParams, grid: &LatGrid) -> Result<EbmState> {
    params.validate(grid)?;
    if state.temps.len() != grid.len() {
        return Err(Error::dim("EBM state", grid.len(), state.temps.len()));
    }
    let k = params.dt / params.heat_capacity;
    let forcing = radiative_forcing(&state.temps, params, grid);
    let rhs: Vec<f64> = state.temps.iter().zip(&forcing).map(|(t, f)| t + k * f).collect();
    let (sub, diag, sup) = diffusion_bands(params.d, grid);
    let sub: Vec<f64> = sub.iter().map(|v| -k * v).collect();
    let sup: Vec<f64> = sup.iter().map(|v| -k * v).collect();
    let diag: Vec<f64> = diag.iter().map(|v| 1.0 - k * v).collect();
    let temps = solve_tridiagonal(&sub, &diag, &sup, &rhs);
    if let Some(bad) = temps.iter().find(|t| !t.is_finite() || t.abs() >= FAULT_BOUND_C) {
        return Err(Error::IntegrationFault(format!(
            "EBM temperature {bad} °C at step {}",
            state.t + 1
        )));
    }
    Ok(EbmState { temps, t: state.t + 1 })
}

/// Steady state of the model, solved directly: `(B - L) T = (1 - α) Q - A`.
pub fn equilibrium(params: &EbmParams, grid: &LatGrid) -> Result<Vec<f64>> {
    params.validate(grid)?;
    let (sub, diag, sup) = diffusion_bands(params.d, grid);
    let sub: Vec<f64> = sub.iter().map(|v| -v).collect();
    let sup: Vec<f64> = sup.iter().map(|v| -v).collect();
    let diag: Vec<f64> = diag.iter().zip(&params.b).map(|(v, b)| b - v).collect();
    let rhs: Vec<f64> = params
        .absorbed_shortwave(grid)
        .iter()
        .zip(&params.a)
        .map(|(sw, a)| sw - a)
        .collect();
    Ok(solve_tridiagonal(&sub, &diag, &sup, &rhs))
}

/// Reference temperature field on the model grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub temps: Vec<f64>,
    pub provenance: String,
}

/// Amplitude (W m⁻²) of the hemispheric OLR asymmetry baked into the
/// synthetic target; the southern hemisphere radiates more and runs colder.
pub const SYNTHETIC_ASYMMETRY: f64 = 10.0;

impl Climatology {
    pub fn new(temps: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if temps.len() != N_LAT {
            return Err(Error::dim("climatology", N_LAT, temps.len()));
        }
        if temps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("climatology contains non-finite values".into()));
        }
        Ok(Self {
            temps,
            provenance: provenance.into(),
        })
    }

    /// Parameters whose equilibrium is the shipped synthetic target. Every
    /// value lies inside the controllable ranges, so the target is reachable
    /// with latitude-resolved OLR coefficients.
    pub fn synthetic_params() -> EbmParams {
        let grid = LatGrid::standard();
        let mut p = EbmParams::with_scalars(214.0, 1.98, 0.36, 0.27, 0.58);
        p.a = grid
            .centers_deg()
            .iter()
            .map(|phi| 214.0 - SYNTHETIC_ASYMMETRY * phi.to_radians().sin())
            .collect();
        p
    }

    pub fn synthetic() -> Self {
        let grid = LatGrid::standard();
        let temps = equilibrium(&Self::synthetic_params(), &grid).expect("synthetic parameters are valid");
        Self {
            temps,
            provenance:
                "synthetic: EBM equilibrium, A = 214 - 10 sin(lat), B = 1.98, alpha0 = 0.36, alpha2 = 0.27, D = 0.58"
                    .into(),
        }
    }
}

/// `-(1/N) Σ (T - T_obs)²` over all bands.
pub fn reward_mse(temps: &[f64], reference: &[f64]) -> Result<f64> {
    reward_mse_over(temps, reference, 0..reference.len())
}

/// Negative mean squared error restricted to `region`.
pub fn reward_mse_over(temps: &[f64], reference: &[f64], region: Range<usize>) -> Result<f64> {
    if temps.len() != reference.len() {
        return Err(Error::dim("temperature field", reference.len(), temps.len()));
    }
    if region.is_empty() || region.end > temps.len() {
        return Err(Error::Config(format!("invalid reward region {region:?}")));
    }
    let n = region.len() as f64;
    Ok(-temps[region.clone()]
        .iter()
        .zip(&reference[region])
        .map(|(t, r)| (t - r).powi(2))
        .sum::<f64>()
        / n)
}

/// cos φ-weighted RMSE over the whole grid.
pub fn weighted_rmse(temps: &[f64], reference: &[f64], grid: &LatGrid) -> f64 {
    temps
        .iter()
        .zip(reference)
        .zip(grid.weights())
        .map(|((t, r), w)| w * (t - r).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Calibrates scalar OLR coefficients against a climatology by cos φ-weighted
/// least squares on the steady-state balance `(1-α)Q + L T_obs = A + B T_obs`.
/// Albedo, diffusivity and insolation are taken from `fixed`.
pub fn fit_static_baseline(climatology: &Climatology, fixed: &EbmParams, grid: &LatGrid) -> Result<(f64, f64)> {
    let obs = &climatology.temps;
    if obs.len() != grid.len() {
        return Err(Error::dim("climatology", grid.len(), obs.len()));
    }
    let transport = diffusion(obs, fixed.d, grid);
    let target: Vec<f64> = fixed
        .absorbed_shortwave(grid)
        .iter()
        .zip(&transport)
        .map(|(sw, tr)| sw + tr)
        .collect();
    let w = grid.weights();
    let mean = |v: &[f64]| v.iter().zip(w).map(|(x, w)| x * w).sum::<f64>();
    let mean_t = mean(obs);
    let mean_y = mean(&target);
    let mut var_t = 0.0;
    let mut cov = 0.0;
    for j in 0..obs.len() {
        var_t += w[j] * (obs[j] - mean_t).powi(2);
        cov += w[j] * (obs[j] - mean_t) * (target[j] - mean_y);
    }
    let scale = obs.iter().map(|t| t.abs()).fold(1.0, f64::max);
    if var_t <= 1e-12 * scale * scale {
        return Err(Error::DegenerateFit("climatology has no meridional variance".into()));
    }
    let b = cov / var_t;
    Ok((mean_y - b * mean_t, b))
}

/// Static baseline run: canonical albedo/diffusion with regression-fitted
/// scalar A and B.
pub fn static_baseline_params(climatology: &Climatology, grid: &LatGrid) -> Result<EbmParams> {
    let canonical = EbmParams::canonical();
    let (a, b) = fit_static_baseline(climatology, &canonical, grid)?;
    Ok(EbmParams {
        a: vec![a; grid.len()],
        b: vec![b; grid.len()],
        ..canonical
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EbmVariant {
    /// Five global scalars.
    V0,
    /// Latitude-resolved A and B plus three scalars.
    V1,
}

/// Which parameters an agent controls and where its reward is measured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlLayout {
    /// `[A, B, α0, α2, D]` applied everywhere.
    Global,
    /// `[A_j.., B_j.., α0, α2, D]` for `j` in the region; bands outside keep
    /// the base values.
    Regional(Range<usize>),
}

impl ControlLayout {
    pub fn action_dim(&self) -> usize {
        match self {
            ControlLayout::Global => 5,
            ControlLayout::Regional(r) => 2 * r.len() + 3,
        }
    }

    pub fn bounds(&self) -> BoundedBox {
        let per = match self {
            ControlLayout::Global => 1,
            ControlLayout::Regional(r) => r.len(),
        };
        let mut lo = vec![A_RANGE.0; per];
        let mut hi = vec![A_RANGE.1; per];
        lo.extend(std::iter::repeat_n(B_RANGE.0, per));
        hi.extend(std::iter::repeat_n(B_RANGE.1, per));
        lo.extend([ALPHA0_RANGE.0, ALPHA2_RANGE.0, D_RANGE.0]);
        hi.extend([ALPHA0_RANGE.1, ALPHA2_RANGE.1, D_RANGE.1]);
        BoundedBox::new(lo, hi).expect("static EBM bounds are valid")
    }

    /// Writes mapped physical values into `params`.
    pub fn apply(&self, physical: &[f64], params: &mut EbmParams) {
        match self {
            ControlLayout::Global => {
                params.a.iter_mut().for_each(|a| *a = physical[0]);
                params.b.iter_mut().for_each(|b| *b = physical[1]);
            }
            ControlLayout::Regional(r) => {
                let n = r.len();
                params.a[r.clone()].copy_from_slice(&physical[..n]);
                params.b[r.clone()].copy_from_slice(&physical[n..2 * n]);
            }
        }
        let k = physical.len() - 3;
        params.alpha0 = physical[k];
        params.alpha2 = physical[k + 1];
        params.d = physical[k + 2];
    }
}

/// EBM environment. Observation is the full temperature field scaled by
/// 1/100; reward is the negative MSE against the climatology over the
/// reward region.
#[derive(Debug, Clone)]
pub struct EbmEnv {
    id: String,
    grid: LatGrid,
    base: EbmParams,
    climatology: Climatology,
    layout: ControlLayout,
    bounds: BoundedBox,
    reward_region: Range<usize>,
    state: Option<EbmState>,
    current: EbmParams,
}

impl EbmEnv {
    pub fn new(
        id: impl Into<String>,
        layout: ControlLayout,
        reward_region: Range<usize>,
        climatology: Climatology,
    ) -> Result<Self> {
        let grid = LatGrid::standard();
        if climatology.temps.len() != grid.len() {
            return Err(Error::dim("climatology", grid.len(), climatology.temps.len()));
        }
        if let ControlLayout::Regional(r) = &layout {
            if r.is_empty() || r.end > grid.len() {
                return Err(Error::Config(format!("control region {r:?} outside grid")));
            }
        }
        if reward_region.is_empty() || reward_region.end > grid.len() {
            return Err(Error::Config(format!("reward region {reward_region:?} outside grid")));
        }
        let base = EbmParams::canonical();
        Ok(Self {
            id: id.into(),
            bounds: layout.bounds(),
            grid,
            current: base.clone(),
            base,
            climatology,
            layout,
            reward_region,
            state: None,
        })
    }

    pub fn temperature(&self) -> Option<&[f64]> {
        self.state.as_ref().map(|s| s.temps.as_slice())
    }

    pub fn grid(&self) -> &LatGrid {
        &self.grid
    }

    pub fn climatology(&self) -> &Climatology {
        &self.climatology
    }

    pub fn layout(&self) -> &ControlLayout {
        &self.layout
    }

    /// Parameters applied during the most recent step.
    pub fn current_params(&self) -> &EbmParams {
        &self.current
    }
}

pub fn make_ebm_env(variant: EbmVariant, climatology: Climatology) -> Result<EbmEnv> {
    match variant {
        EbmVariant::V0 => EbmEnv::new("ebm-v0", ControlLayout::Global, 0..N_LAT, climatology),
        EbmVariant::V1 => EbmEnv::new("ebm-v1", ControlLayout::Regional(0..N_LAT), 0..N_LAT, climatology),
    }
}

impl Env for EbmEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn obs_dim(&self) -> usize {
        self.grid.len()
    }

    fn action_dim(&self) -> usize {
        self.layout.action_dim()
    }

    fn episode_length(&self) -> usize {
        EPISODE_LENGTH
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        let state = EbmState::isothermal(INITIAL_TEMP_C, &self.grid);
        let obs = state.temps.iter().map(|t| t * OBS_SCALE).collect();
        self.state = Some(state);
        self.current = self.base.clone();
        obs
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let state = self.state.as_ref().ok_or(Error::NotReset)?;
        let physical = map_action(action, &self.bounds)?;
        let mut params = self.base.clone();
        self.layout.apply(&physical, &mut params);
        let next = ebm_step(state, &params, &self.grid)?;
        let reward = reward_mse_over(&next.temps, &self.climatology.temps, self.reward_region.clone())?;
        let observation = next.temps.iter().map(|t| t * OBS_SCALE).collect();
        let truncated = next.t >= EPISODE_LENGTH;
        self.state = Some(next);
        self.current = params;
        Ok(StepResult {
            observation,
            reward,
            terminated: false,
            truncated,
            info: Info {
                params: physical,
                ..Info::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_field(seed: u64, n: usize, scale: f64) -> Vec<f64> {
        let mut rng = crate::seeded_rng(seed);
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn grid_geometry() {
        let g = LatGrid::standard();
        assert_eq!(g.len(), 96);
        assert!(g.centers_deg().windows(2).all(|w| w[0] < w[1]));
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.weights().iter().all(|w| *w > 0.0));
        for (idx, lat) in [(0, -89.0625), (47, -0.9375), (79, 59.0625)] {
            assert!((g.centers_deg()[idx] - lat).abs() < 1e-12);
        }
    }

    #[test]
    fn insolation_examples() {
        let g = LatGrid::standard();
        let flat = insolation(&g, 1365.0, 0.0);
        assert!(flat.iter().all(|q| (q - 1365.0 / 4.0).abs() < 1e-12));
        let q = insolation(&g, 1365.0, -0.48);
        // equatorial band has sin φ ≈ 0.016, so P2 ≈ -0.4996
        let expected = 1365.0 / 4.0 * (1.0 - 0.48 * p2(g.centers_deg()[47].to_radians().sin()));
        assert!((q[47] - expected).abs() < 1e-9);
        assert!((q[47] - 423.08).abs() < 0.01);
        for j in 0..48 {
            assert!((q[j] - q[95 - j]).abs() < 1e-9);
        }
    }

    #[test]
    fn albedo_examples() {
        let g = LatGrid::standard();
        assert!(albedo(&g, 0.32, 0.0).iter().all(|a| (a - 0.32).abs() < 1e-15));
        assert!((0.354 + 0.25 * p2(0.0) - 0.229).abs() < 1e-12);
        assert!((0.354 + 0.25 * p2(1.0) - 0.604).abs() < 1e-12);
        let a = albedo(&g, 0.354, 0.25);
        assert!(a[47] > 0.229 && a[47] < 0.2292);
        assert!(a[0] < 0.604 && a[0] > 0.603);
        assert_eq!(albedo(&g, 0.9, 0.3)[0], 0.95);
    }

    #[test]
    fn olr_examples() {
        let z = vec![0.0; 4];
        assert_eq!(olr(&z, &[210.0; 4], &[2.0; 4]), vec![210.0; 4]);
        assert_eq!(olr(&[10.0], &[210.0], &[2.0]), vec![230.0]);
        assert_eq!(olr(&[55.0], &[210.0], &[0.0]), vec![210.0]);
    }

    #[test]
    fn diffusion_vanishes_on_isothermal_field() {
        let g = LatGrid::standard();
        assert!(diffusion(&vec![12.0; 96], 0.6, &g).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn diffusion_matches_flux_difference_oracle_on_toy_grid() {
        let g = LatGrid::new(4);
        let t = [-10.0, 5.0, 20.0, 0.0];
        let d = 0.6;
        let dphi = std::f64::consts::PI / 4.0;
        // centres -67.5, -22.5, 22.5, 67.5; edges -45, 0, 45
        let ce = [45f64.to_radians().cos(), 1.0, 45f64.to_radians().cos()];
        let cc = [
            67.5f64.to_radians().cos(),
            22.5f64.to_radians().cos(),
            22.5f64.to_radians().cos(),
            67.5f64.to_radians().cos(),
        ];
        let f: Vec<f64> = (0..3).map(|e| d * ce[e] * (t[e + 1] - t[e]) / dphi).collect();
        let oracle = [
            f[0] / (cc[0] * dphi),
            (f[1] - f[0]) / (cc[1] * dphi),
            (f[2] - f[1]) / (cc[2] * dphi),
            -f[2] / (cc[3] * dphi),
        ];
        let got = diffusion(&t, d, &g);
        for (a, b) in got.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn diffusion_conserves_weighted_energy() {
        let g = LatGrid::standard();
        for seed in 0..20 {
            let t = random_field(seed, 96, 40.0);
            let tend = diffusion(&t, 0.65, &g);
            let sum: f64 = tend.iter().zip(g.cos_centers()).map(|(x, c)| x * c).sum();
            let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(sum.abs() < 1e-10 * norm, "{sum}");
        }
    }

    #[test]
    fn diffusion_is_self_adjoint() {
        let g = LatGrid::standard();
        let u = random_field(1, 96, 30.0);
        let v = random_field(2, 96, 30.0);
        let lu = diffusion(&u, 0.6, &g);
        let lv = diffusion(&v, 0.6, &g);
        let w = g.weights();
        let a: f64 = (0..96).map(|j| w[j] * u[j] * lv[j]).sum();
        let b: f64 = (0..96).map(|j| w[j] * v[j] * lu[j]).sum();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()));
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let g = LatGrid::standard();
        let p = EbmParams::canonical();
        let eq = equilibrium(&p, &g).unwrap();
        let next = ebm_step(
            &EbmState {
                temps: eq.clone(),
                t: 0,
            },
            &p,
            &g,
        )
        .unwrap();
        for (a, b) in eq.iter().zip(&next.temps) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_start_cools_monotonically_and_converges() {
        let g = LatGrid::standard();
        let p = EbmParams::canonical();
        let w = g.weights();
        let mean = |t: &[f64]| t.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let mut s = EbmState::isothermal(INITIAL_TEMP_C, &g);
        let target = mean(&equilibrium(&p, &g).unwrap());
        let mut gap = mean(&s.temps) - target;
        let mut prev = s.temps.clone();
        let mut tail = f64::INFINITY;
        for _ in 0..200 {
            s = ebm_step(&s, &p, &g).unwrap();
            let new_gap = mean(&s.temps) - target;
            assert!(new_gap <= gap && new_gap >= 0.0);
            gap = new_gap;
            tail = s
                .temps
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prev = s.temps.clone();
        }
        assert!(tail < 1e-6, "Cauchy tail {tail}");
    }

    #[test]
    fn global_mean_budget_ignores_diffusion() {
        let g = LatGrid::standard();
        let p = EbmParams::canonical();
        let s = EbmState {
            temps: random_field(3, 96, 30.0),
            t: 0,
        };
        let next = ebm_step(&s, &p, &g).unwrap();
        let w = g.weights();
        let forcing = radiative_forcing(&s.temps, &p, &g);
        let lhs: f64 = (0..96).map(|j| w[j] * (next.temps[j] - s.temps[j])).sum::<f64>() / p.dt;
        let rhs: f64 = (0..96).map(|j| w[j] * forcing[j]).sum::<f64>() / p.heat_capacity;
        assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1e-9), "{lhs} {rhs}");
    }

    #[test]
    fn halving_the_step_is_first_order_consistent() {
        // Linear relaxation toward equilibrium: one step of 2dt vs two steps
        // of dt differ by O(dt²) relative to the displacement.
        let g = LatGrid::standard();
        let mut fine = EbmParams::canonical();
        fine.dt = 2.0e5;
        let mut coarse = fine.clone();
        coarse.dt = 4.0e5;
        let s = EbmState::isothermal(30.0, &g);
        let two = ebm_step(&ebm_step(&s, &fine, &g).unwrap(), &fine, &g).unwrap();
        let one = ebm_step(&s, &coarse, &g).unwrap();
        let moved = two
            .temps
            .iter()
            .zip(&s.temps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let diff = two
            .temps
            .iter()
            .zip(&one.temps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 0.05 * moved, "{diff} vs {moved}");
    }

    #[test]
    fn blow_up_is_an_integration_fault() {
        let g = LatGrid::standard();
        let mut p = EbmParams::canonical();
        p.a = vec![-5000.0; 96];
        let s = EbmState::isothermal(50.0, &g);
        assert!(matches!(ebm_step(&s, &p, &g), Err(Error::IntegrationFault(_))));
    }

    #[test]
    fn reward_examples() {
        let obs = Climatology::synthetic();
        assert_eq!(reward_mse(&obs.temps, &obs.temps).unwrap(), 0.0);
        let shifted: Vec<f64> = obs.temps.iter().map(|t| t + 1.0).collect();
        assert!((reward_mse(&shifted, &obs.temps).unwrap() + 1.0).abs() < 1e-12);
        let mut bump = obs.temps.clone();
        bump[0] += 2.0;
        assert!((reward_mse(&bump, &obs.temps).unwrap() + 4.0 / 96.0).abs() < 1e-12);
        assert!(reward_mse(&bump[..95], &obs.temps).is_err());
    }

    #[test]
    fn baseline_fit_round_trips_canonical_equilibrium() {
        let g = LatGrid::standard();
        let p = EbmParams::canonical();
        let clim = Climatology::new(equilibrium(&p, &g).unwrap(), "canonical").unwrap();
        let (a, b) = fit_static_baseline(&clim, &p, &g).unwrap();
        assert!((a - 210.0).abs() < 0.5, "{a}");
        assert!((b - 2.0).abs() < 0.01, "{b}");
    }

    #[test]
    fn constant_climatology_is_degenerate() {
        let g = LatGrid::standard();
        let clim = Climatology::new(vec![14.0; 96], "flat").unwrap();
        assert!(matches!(
            fit_static_baseline(&clim, &EbmParams::canonical(), &g),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn fitted_baseline_beats_canonical_on_synthetic_target() {
        let g = LatGrid::standard();
        let clim = Climatology::synthetic();
        let base = equilibrium(&static_baseline_params(&clim, &g).unwrap(), &g).unwrap();
        let canon = equilibrium(&EbmParams::canonical(), &g).unwrap();
        let rb = weighted_rmse(&base, &clim.temps, &g);
        let rc = weighted_rmse(&canon, &clim.temps, &g);
        assert!(rb < rc, "{rb} vs {rc}");
        assert!(rb > 0.5, "baseline should not match an asymmetric target: {rb}");
    }

    #[test]
    fn synthetic_target_is_reachable_within_bounds() {
        let p = Climatology::synthetic_params();
        let layout = ControlLayout::Regional(0..96);
        let mut physical = p.a.clone();
        physical.extend(&p.b);
        physical.extend([p.alpha0, p.alpha2, p.d]);
        assert!(layout.bounds().contains(&physical));
    }

    #[test]
    fn env_variants() {
        let clim = Climatology::synthetic();
        let mut v0 = make_ebm_env(EbmVariant::V0, clim.clone()).unwrap();
        let v1 = make_ebm_env(EbmVariant::V1, clim.clone()).unwrap();
        assert_eq!(v0.action_dim(), 5);
        assert_eq!(v1.action_dim(), 195);
        let obs = v0.reset(0);
        assert_eq!(obs.len(), 96);
        assert!(obs.iter().all(|o| (o - 0.5).abs() < 1e-15));
        let r = reward_mse(v0.temperature().unwrap(), &clim.temps).unwrap();
        assert!(r < 0.0);
        let step = v0.step(&[0.0; 5]).unwrap();
        let mid = [280.0, 2.0, 0.35, 0.25, 0.6];
        for (p, m) in step.info.params.iter().zip(mid) {
            assert!((p - m).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_actions_reproduce_direct_integration() {
        let clim = Climatology::synthetic();
        let mut env = make_ebm_env(EbmVariant::V0, clim).unwrap();
        let g = LatGrid::standard();
        let p = EbmParams::canonical();
        let raw: Vec<f64> = [210.0, 2.0, 0.354, 0.25, 0.6]
            .iter()
            .zip(
                ControlLayout::Global
                    .bounds()
                    .lo()
                    .iter()
                    .zip(ControlLayout::Global.bounds().hi()),
            )
            .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
            .collect();
        env.reset(0);
        let mut s = EbmState::isothermal(INITIAL_TEMP_C, &g);
        for _ in 0..10 {
            env.step(&raw).unwrap();
            s = ebm_step(&s, &p, &g).unwrap();
        }
        for (a, b) in env.temperature().unwrap().iter().zip(&s.temps) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
