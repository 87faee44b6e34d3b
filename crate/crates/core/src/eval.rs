//! Threshold metrics, rank-based scoring and zonal diagnostics.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ebm::LatGrid;
use crate::env::{Controller, Env, Episode, Mode};
use crate::{Error, Result};

/// Episodic returns at the global step on which each episode ended.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    points: Vec<(usize, f64)>,
}

impl TrainingCurve {
    pub fn new(points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("curve steps must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// Curve of fixed-length episodes: the k-th return lands on step
    /// `(k + 1) · length`.
    pub fn from_returns(returns: &[f64], length: usize) -> Self {
        Self {
            points: returns
                .iter()
                .enumerate()
                .map(|(k, r)| ((k + 1) * length, *r))
                .collect(),
        }
    }

    pub fn push(&mut self, step: usize, ret: f64) -> Result<()> {
        if self.points.last().is_some_and(|(s, _)| *s >= step) {
            return Err(Error::Config(format!("step {step} does not advance the curve")));
        }
        self.points.push((step, ret));
        Ok(())
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }

    pub fn returns(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }
}

/// Episodic return thresholds per environment.
#[allow(clippy::approx_constant)]
pub const THRESHOLDS: [(&str, f64); 8] = [
    ("scbc-v0", -0.25),
    ("scbc-v1", -2.718),
    ("scbc-v2", -(160.0 + 2.718)),
    ("rce-v0", -43_900.0),
    ("rce17-v0", -43_700.0),
    ("rce17-v1", -43_650.0),
    ("ebm-v0", -10_000.0),
    ("ebm-v1", -30_000.0),
];

/// Federated EBM variants are held to the single-agent latitude-resolved
/// threshold.
pub fn threshold(env_id: &str) -> Option<f64> {
    let key = match env_id {
        "ebm-v2" | "ebm-v3" => "ebm-v1",
        other => other,
    };
    THRESHOLDS.iter().find(|(id, _)| *id == key).map(|(_, t)| *t)
}

pub fn variance_penalty_threshold(env_id: &str) -> Option<f64> {
    if env_id.starts_with("scbc") {
        Some(3e-3)
    } else if env_id.starts_with("rce") || env_id.starts_with("ebm") {
        Some(3e5)
    } else {
        None
    }
}

/// Typical per-step error implied by a threshold, `sqrt(|threshold| / steps)`.
pub fn error_per_step(threshold: f64, steps_per_episode: usize) -> f64 {
    (threshold.abs() / steps_per_episode as f64).sqrt()
}

/// Table of thresholds with the implied per-step error.
pub fn threshold_table() -> String {
    let lengths = |id: &str| if id.starts_with("rce") { 500 } else { 200 };
    let mut out = format!("{:<10} {:>12} {:>10}\n", "env", "threshold", "err/step");
    for (id, t) in THRESHOLDS {
        out.push_str(&format!(
            "{id:<10} {t:>12.3} {:>10.3}\n",
            error_per_step(t, lengths(id))
        ));
    }
    out
}

fn crossing(curve: &TrainingCurve, threshold: f64) -> Result<Option<usize>> {
    if curve.is_empty() {
        return Err(Error::Empty("training curve"));
    }
    Ok(curve.points.iter().position(|(_, r)| *r >= threshold))
}

pub fn steps_to_threshold(curve: &TrainingCurve, threshold: f64) -> Result<Option<usize>> {
    Ok(crossing(curve, threshold)?.map(|i| curve.points[i].0))
}

/// Population variance of the returns from the first crossing onwards.
pub fn variance_after_threshold(curve: &TrainingCurve, threshold: f64) -> Result<Option<f64>> {
    Ok(crossing(curve, threshold)?.map(|i| population_variance(&curve.returns()[i..])))
}

pub fn asymptotic_delta(curve: &TrainingCurve, threshold: f64) -> Result<f64> {
    curve
        .last()
        .map(|(_, r)| r - threshold)
        .ok_or(Error::Empty("training curve"))
}

pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub n_to_threshold: Option<usize>,
    pub var_after_threshold: Option<f64>,
    pub asymptotic_delta: f64,
    pub penalty: bool,
}

impl MetricRecord {
    pub fn from_curve(curve: &TrainingCurve, threshold: f64, variance_limit: f64) -> Result<Self> {
        let var = variance_after_threshold(curve, threshold)?;
        Ok(Self {
            n_to_threshold: steps_to_threshold(curve, threshold)?,
            var_after_threshold: var,
            asymptotic_delta: asymptotic_delta(curve, threshold)?,
            penalty: var.is_some_and(|v| v > variance_limit),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub name: String,
    pub rank_steps: f64,
    pub rank_variance: f64,
    pub rank_delta: f64,
    pub penalty: bool,
    pub rank_sum: f64,
}

/// Ranks ascending with absent values last; tied values share the mean of
/// the positions they occupy.
fn mean_ranks(values: &[Option<f64>]) -> Vec<f64> {
    let key = |v: &Option<f64>| v.unwrap_or(f64::INFINITY);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| key(&values[*a]).total_cmp(&key(&values[*b])));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && key(&values[order[j + 1]]) == key(&values[order[i]]) {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Sums per-metric ranks (steps to threshold and post-threshold variance
/// ascending, asymptotic delta descending), adds one point for a variance
/// penalty and sorts by the total.
pub fn composite_rank(records: &[(String, MetricRecord)]) -> Result<Vec<RankRow>> {
    if records.len() < 2 {
        return Err(Error::Config("ranking needs at least two algorithms".into()));
    }
    let steps = mean_ranks(
        &records
            .iter()
            .map(|(_, r)| r.n_to_threshold.map(|n| n as f64))
            .collect::<Vec<_>>(),
    );
    let var = mean_ranks(&records.iter().map(|(_, r)| r.var_after_threshold).collect::<Vec<_>>());
    let delta = mean_ranks(
        &records
            .iter()
            .map(|(_, r)| Some(-r.asymptotic_delta))
            .collect::<Vec<_>>(),
    );
    let mut rows: Vec<RankRow> = records
        .iter()
        .enumerate()
        .map(|(i, (name, r))| RankRow {
            name: name.clone(),
            rank_steps: steps[i],
            rank_variance: var[i],
            rank_delta: delta[i],
            penalty: r.penalty,
            rank_sum: steps[i] + var[i] + delta[i] + if r.penalty { 1.0 } else { 0.0 },
        })
        .collect();
    rows.sort_by(|a, b| a.rank_sum.total_cmp(&b.rank_sum));
    Ok(rows)
}

/// Latitude bands with their area weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonalBands {
    pub labels: Vec<String>,
    pub ranges: Vec<Range<usize>>,
    pub weights: Vec<f64>,
}

impl ZonalBands {
    /// Six 30° bands of 16 latitudes, south to north.
    pub fn standard(grid: &LatGrid) -> Self {
        let labels = ["90S-60S", "60S-30S", "30S-0", "0-30N", "30N-60N", "60N-90N"];
        let per = grid.len() / labels.len();
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            ranges: (0..labels.len()).map(|b| b * per..(b + 1) * per).collect(),
            weights: grid.cos_centers().to_vec(),
        }
    }

    pub fn new(labels: Vec<String>, ranges: Vec<Range<usize>>, weights: Vec<f64>) -> Result<Self> {
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(Error::Config("bands must partition the grid in order".into()));
            }
            next = r.end;
        }
        if next != weights.len() || labels.len() != ranges.len() {
            return Err(Error::dim("band partition", weights.len(), next));
        }
        Ok(Self {
            labels,
            ranges,
            weights,
        })
    }

    fn per_band(&self, temps: &[f64], obs: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let n = self.weights.len();
        if temps.len() != n || obs.len() != n {
            return Err(Error::dim("zonal field", n, temps.len().min(obs.len())));
        }
        Ok(self
            .ranges
            .iter()
            .map(|r| {
                let w: f64 = self.weights[r.clone()].iter().sum();
                r.clone().map(|j| self.weights[j] * f(temps[j] - obs[j])).sum::<f64>() / w
            })
            .collect())
    }
}

/// Area-weighted RMSE per band.
pub fn area_wrmse(temps: &[f64], obs: &[f64], bands: &ZonalBands) -> Result<Vec<f64>> {
    Ok(bands
        .per_band(temps, obs, |e| e * e)?
        .into_iter()
        .map(f64::sqrt)
        .collect())
}

/// Area-weighted mean error per band; positive means too warm.
pub fn zonal_bias(temps: &[f64], obs: &[f64], bands: &ZonalBands) -> Result<Vec<f64>> {
    bands.per_band(temps, obs, |e| e)
}

/// Mean and `1.96 σ` half-width at each index across equally long series.
pub fn confidence_band(series: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    let n = series.first().map(Vec::len).ok_or(Error::Empty("series"))?;
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::Config("series differ in length".into()));
    }
    Ok((0..n)
        .map(|i| {
            let col: Vec<f64> = series.iter().map(|s| s[i]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            (mean, 1.96 * population_variance(&col).sqrt())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillRow {
    pub seed: u64,
    pub episodic_return: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillReport {
    pub rows: Vec<SkillRow>,
    pub mean_error: f64,
    pub std_error: f64,
    pub best_seed: u64,
}

impl fmt::Display for SkillReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>14} {:>10}", "seed", "return", "error")?;
        for r in &self.rows {
            let mark = if r.seed == self.best_seed { " x" } else { "" };
            writeln!(f, "{:>6} {:>14.4} {:>10.4}{mark}", r.seed, r.episodic_return, r.error)?;
        }
        write!(f, "error {:.4} ± {:.4}", self.mean_error, self.std_error)
    }
}

/// One inference episode per seed; `error` scores the finished episode
/// (lower is better).
pub fn inference_skill<E: Env + ?Sized>(
    env: &mut E,
    controller: &mut dyn Controller,
    seeds: &[u64],
    error: impl Fn(&E, &Episode) -> f64,
) -> Result<SkillReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let episode = crate::env::run_episode(env, controller, Mode::Infer, seed)?;
        rows.push(SkillRow {
            seed,
            episodic_return: episode.episodic_return,
            error: error(env, &episode),
        });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let best = rows
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .expect("at least one row");
    Ok(SkillReport {
        best_seed: best.seed,
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
        std_error: population_variance(&errors).sqrt(),
        rows,
    })
}
