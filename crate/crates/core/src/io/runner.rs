use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{load_climatology, load_reference};
use super::experiment::{EnvName, ExperimentId, Family};
use crate::ebm::{make_ebm_env, weighted_rmse, Climatology, EbmEnv, EbmVariant, LatGrid};
use crate::env::{run_episode, Env, Episode, Mode};
use crate::eval::{
    area_wrmse, threshold, variance_penalty_threshold, zonal_bias, MetricRecord, TrainingCurve, ZonalBands,
};
use crate::fedrl::{
    fed_train, global_policy_rollout, local_rollout, rollout, AggregationPolicy, FedSetup, RolloutReport,
};
use crate::nn::checkpoint;
use crate::rce::{mae_at_levels, ColumnGrid, RceEnv, RceVariant, ReferenceProfile, DIAGNOSTIC_LEVELS_HPA};
use crate::rl::train::{EpisodeRecord, StepRecord, TrainMonitor};
use crate::rl::{make_agent, train, Agent, Scope};
use crate::scbc::{ScbcEnv, Variant};
use crate::{Error, Result};

/// Inference episodes are reset with a seed disjoint from training resets.
pub fn inference_seed(seed: u64) -> u64 {
    seed.wrapping_add(1 << 40)
}

/// Reference data resolved for a run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub climatology: Option<Climatology>,
    pub reference: Option<ReferenceProfile>,
}

impl Inputs {
    /// Loads what the experiment's family needs, falling back to the built-in
    /// synthetic targets when no file is given.
    pub fn resolve(cfg: &RunConfig) -> Result<Self> {
        let family = cfg.experiment.env.family();
        let climatology = match (family, &cfg.climatology) {
            (Family::Ebm, Some(p)) => Some(load_climatology(p, &LatGrid::standard())?),
            (Family::Ebm, None) => Some(Climatology::synthetic()),
            _ => None,
        };
        let reference = match (family, &cfg.reference) {
            (Family::Rce, Some(p)) => Some(load_reference(p, &ColumnGrid::standard())?),
            (Family::Rce, None) => Some(ReferenceProfile::synthetic()),
            _ => None,
        };
        Ok(Self { climatology, reference })
    }

    fn climatology(&self) -> Result<Climatology> {
        self.climatology
            .clone()
            .ok_or_else(|| Error::Config("EBM experiment without climatology".into()))
    }

    fn reference(&self) -> Result<ReferenceProfile> {
        self.reference
            .clone()
            .ok_or_else(|| Error::Config("RCE experiment without reference profile".into()))
    }
}

/// Per-band diagnostics of a finished inference episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalRow {
    pub band: String,
    pub rmse: f64,
    pub bias: f64,
}

/// Single-agent environment together with its skill measure.
pub trait Diagnose: Env {
    /// Lower is better: K for SCBC and RCE, °C for the EBM.
    fn skill_error(&self, episode: &Episode) -> Result<f64>;

    fn zonal(&self) -> Result<Option<Vec<ZonalRow>>> {
        Ok(None)
    }
}

impl Diagnose for ScbcEnv {
    /// Mean absolute distance from the observed temperature after each step.
    fn skill_error(&self, episode: &Episode) -> Result<f64> {
        let to = self.params().t_observed();
        let n = episode.transitions.len().max(1) as f64;
        Ok(episode
            .transitions
            .iter()
            .map(|t| (t.next_state[0] - to).abs() * 100.0)
            .sum::<f64>()
            / n)
    }
}

impl Diagnose for RceEnv {
    /// Mean absolute error over the diagnostic levels at the final state.
    fn skill_error(&self, _episode: &Episode) -> Result<f64> {
        let state = self.state().ok_or(Error::NotReset)?;
        let mae = mae_at_levels(
            &state.temps,
            &self.reference().temps,
            &DIAGNOSTIC_LEVELS_HPA,
            self.grid(),
        )?;
        Ok(mae.iter().sum::<f64>() / mae.len() as f64)
    }
}

impl Diagnose for EbmEnv {
    fn skill_error(&self, _episode: &Episode) -> Result<f64> {
        let temps = self.temperature().ok_or(Error::NotReset)?;
        Ok(weighted_rmse(temps, &self.climatology().temps, self.grid()))
    }

    fn zonal(&self) -> Result<Option<Vec<ZonalRow>>> {
        let temps = self.temperature().ok_or(Error::NotReset)?;
        zonal_rows(temps, &self.climatology().temps).map(Some)
    }
}

fn zonal_rows(temps: &[f64], reference: &[f64]) -> Result<Vec<ZonalRow>> {
    let bands = ZonalBands::standard(&LatGrid::standard());
    let rmse = area_wrmse(temps, reference, &bands)?;
    let bias = zonal_bias(temps, reference, &bands)?;
    Ok(bands
        .labels
        .iter()
        .zip(rmse.into_iter().zip(bias))
        .map(|(band, (rmse, bias))| ZonalRow {
            band: band.clone(),
            rmse,
            bias,
        })
        .collect())
}

/// Streams step and episode records as JSON lines. Episode boundaries flush
/// both files.
pub struct JsonlMonitor {
    steps: Option<BufWriter<File>>,
    episodes: BufWriter<File>,
    every: usize,
}

impl JsonlMonitor {
    pub fn create(dir: &Path, every: usize) -> Result<Self> {
        Ok(Self {
            steps: if every > 0 {
                Some(BufWriter::new(File::create(dir.join("steps.jsonl"))?))
            } else {
                None
            },
            episodes: BufWriter::new(File::create(dir.join("episodes.jsonl"))?),
            every,
        })
    }
}

impl TrainMonitor for JsonlMonitor {
    fn on_step(&mut self, record: &StepRecord<'_>) -> Result<()> {
        if let Some(w) = self.steps.as_mut().filter(|_| record.step.is_multiple_of(self.every)) {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn on_episode(&mut self, record: &EpisodeRecord) -> Result<ControlFlow<()>> {
        serde_json::to_writer(&mut self.episodes, record)?;
        self.episodes.write_all(b"\n")?;
        self.episodes.flush()?;
        if let Some(w) = self.steps.as_mut() {
            w.flush()?;
        }
        Ok(ControlFlow::Continue(()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    episode: usize,
    step: usize,
    episodic_return: f64,
}

pub fn write_curve(path: &Path, curve: &TrainingCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (episode, (step, ret)) in curve.points().iter().enumerate() {
        w.serialize(CurveRow {
            episode,
            step: *step,
            episodic_return: *ret,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<TrainingCurve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<CurveRow>, _>>()
        .map_err(|e| Error::Data {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    TrainingCurve::new(rows.into_iter().map(|r| (r.step, r.episodic_return)).collect())
}

fn write_zonal(path: &Path, rows: &[ZonalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step reward, raw actions and applied physical parameters.
fn write_inference(path: &Path, episode: &Episode) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n_act = episode.transitions.first().map_or(0, |t| t.action.len());
    let n_par = episode.infos.first().map_or(0, |i| i.params.len());
    let mut header = vec!["step".to_string(), "reward".to_string()];
    header.extend((0..n_act).map(|i| format!("action_{i}")));
    header.extend((0..n_par).map(|i| format!("param_{i}")));
    w.write_record(&header)?;
    for (k, (t, info)) in episode.transitions.iter().zip(&episode.infos).enumerate() {
        let mut row = vec![(k + 1).to_string(), t.reward.to_string()];
        row.extend(t.action.iter().map(f64::to_string));
        row.extend(info.params.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub error: Option<String>,
    pub metrics: Option<MetricRecord>,
    pub final_return: Option<f64>,
    pub skill_error: Option<f64>,
    /// Federated runs only: skill of the averaged policy.
    pub global_skill_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub algo: String,
    pub total_steps: usize,
    pub threshold: f64,
    pub seeds: Vec<SeedResult>,
    /// Metrics of the across-seed mean curve, used to rank algorithms.
    pub mean_metrics: Option<MetricRecord>,
}

impl RunSummary {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::Data {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct SeedArtifacts {
    curve: TrainingCurve,
    skill_error: f64,
    global_skill_error: Option<f64>,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

fn env_threshold(id: &ExperimentId) -> Result<(f64, f64)> {
    let name = id.env.name();
    let t = threshold(name).ok_or_else(|| Error::Config(format!("no threshold for {name}")))?;
    let v = variance_penalty_threshold(name).ok_or_else(|| Error::Config(format!("no variance limit for {name}")))?;
    Ok((t, v))
}

/// Runs every seed of `cfg`. A failing seed is recorded in the summary and
/// the remaining seeds still run.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let inputs = Inputs::resolve(cfg)?;
    let (threshold, var_limit) = env_threshold(&cfg.experiment)?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(&run_dir, seed);
        fs::create_dir_all(&dir)?;
        let outcome = run_seed(cfg, &inputs, seed, &dir).and_then(|a| {
            write_curve(&dir.join("curve.csv"), &a.curve)?;
            Ok(a)
        });
        seeds.push(match outcome {
            Ok(a) => {
                let metrics = MetricRecord::from_curve(&a.curve, threshold, var_limit)?;
                let result = SeedResult {
                    seed,
                    error: None,
                    metrics: Some(metrics),
                    final_return: a.curve.last().map(|(_, r)| r),
                    skill_error: Some(a.skill_error),
                    global_skill_error: a.global_skill_error,
                };
                curves.push(a.curve);
                result
            }
            Err(e) => SeedResult {
                seed,
                error: Some(e.to_string()),
                metrics: None,
                final_return: None,
                skill_error: None,
                global_skill_error: None,
            },
        });
    }
    let mean_metrics = if curves.is_empty() {
        None
    } else {
        let n = curves[0].len();
        let mean: Vec<f64> = (0..n)
            .map(|i| curves.iter().map(|c| c.points()[i].1).sum::<f64>() / curves.len() as f64)
            .collect();
        let mean_curve = TrainingCurve::new(curves[0].points().iter().map(|p| p.0).zip(mean).collect())?;
        Some(MetricRecord::from_curve(&mean_curve, threshold, var_limit)?)
    };
    let summary = RunSummary {
        experiment: cfg.experiment.to_string(),
        algo: cfg.algo.name().into(),
        total_steps: cfg.total_steps,
        threshold,
        seeds,
        mean_metrics,
    };
    write_metrics(&run_dir.join("metrics.csv"), &summary)?;
    fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    seed: u64,
    status: &'a str,
    n_to_threshold: Option<usize>,
    var_after_threshold: Option<f64>,
    asymptotic_delta: Option<f64>,
    penalty: Option<bool>,
    final_return: Option<f64>,
    skill_error: Option<f64>,
    global_skill_error: Option<f64>,
}

fn write_metrics(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &summary.seeds {
        let m = s.metrics.as_ref();
        w.serialize(MetricsRow {
            seed: s.seed,
            status: if s.error.is_some() { "failed" } else { "ok" },
            n_to_threshold: m.and_then(|m| m.n_to_threshold),
            var_after_threshold: m.and_then(|m| m.var_after_threshold),
            asymptotic_delta: m.map(|m| m.asymptotic_delta),
            penalty: m.map(|m| m.penalty),
            final_return: s.final_return,
            skill_error: s.skill_error,
            global_skill_error: s.global_skill_error,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn run_seed(cfg: &RunConfig, inputs: &Inputs, seed: u64, dir: &Path) -> Result<SeedArtifacts> {
    let id = &cfg.experiment;
    match id.env {
        EnvName::ScbcV0 => run_single(cfg, ScbcEnv::variant(Variant::V0), seed, dir),
        EnvName::ScbcV1 => run_single(cfg, ScbcEnv::variant(Variant::V1), seed, dir),
        EnvName::ScbcV2 => run_single(cfg, ScbcEnv::variant(Variant::V2), seed, dir),
        EnvName::RceV0 => run_single(cfg, RceEnv::new(RceVariant::V0, inputs.reference()?)?, seed, dir),
        EnvName::Rce17V0 => run_single(cfg, RceEnv::new(RceVariant::V17, inputs.reference()?)?, seed, dir),
        EnvName::EbmV0 => run_single(cfg, make_ebm_env(EbmVariant::V0, inputs.climatology()?)?, seed, dir),
        EnvName::EbmV1 => run_single(cfg, make_ebm_env(EbmVariant::V1, inputs.climatology()?)?, seed, dir),
        EnvName::EbmV2 | EnvName::EbmV3 => run_federated(cfg, inputs.climatology()?, seed, dir),
    }
}

/// Builds an agent sized for `env`.
pub fn build_agent<E: Env>(cfg: &RunConfig, env: &E, seed: u64) -> Result<Box<dyn Agent>> {
    make_agent(cfg.algo, env.obs_dim(), env.action_dim(), &cfg.hyperparameters, seed)
}

fn run_single<E: Diagnose>(cfg: &RunConfig, mut env: E, seed: u64, dir: &Path) -> Result<SeedArtifacts> {
    let mut agent = build_agent(cfg, &env, seed)?;
    let mut monitor = JsonlMonitor::create(dir, cfg.log_every)?;
    let curve = train(&mut env, agent.as_mut(), cfg.total_steps, seed, &mut monitor)?;
    let tag = format!("{} {} seed {seed}", cfg.experiment, cfg.algo);
    checkpoint::save(&dir.join("final.ckpt"), &tag, &agent.params(Scope::All))?;
    let episode = run_episode(&mut env, agent.as_mut(), Mode::Infer, inference_seed(seed))?;
    write_inference(&dir.join("inference.csv"), &episode)?;
    if let Some(rows) = env.zonal()? {
        write_zonal(&dir.join("zonal.csv"), &rows)?;
    }
    Ok(SeedArtifacts {
        curve,
        skill_error: env.skill_error(&episode)?,
        global_skill_error: None,
    })
}

/// Scores of a trained seed recomputed from its saved checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct InferReport {
    pub episodic_return: f64,
    pub skill_error: f64,
    /// Federated runs that aggregated at least once.
    pub global_skill_error: Option<f64>,
}

/// Reloads the checkpoints written by [`run_experiment`] for `seed` and
/// replays the inference episode.
pub fn infer_seed(cfg: &RunConfig, seed: u64) -> Result<InferReport> {
    let inputs = Inputs::resolve(cfg)?;
    let dir = seed_dir(&cfg.run_dir(), seed);
    match cfg.experiment.env {
        EnvName::ScbcV0 => infer_single(cfg, ScbcEnv::variant(Variant::V0), seed, &dir),
        EnvName::ScbcV1 => infer_single(cfg, ScbcEnv::variant(Variant::V1), seed, &dir),
        EnvName::ScbcV2 => infer_single(cfg, ScbcEnv::variant(Variant::V2), seed, &dir),
        EnvName::RceV0 => infer_single(cfg, RceEnv::new(RceVariant::V0, inputs.reference()?)?, seed, &dir),
        EnvName::Rce17V0 => infer_single(cfg, RceEnv::new(RceVariant::V17, inputs.reference()?)?, seed, &dir),
        EnvName::EbmV0 => infer_single(cfg, make_ebm_env(EbmVariant::V0, inputs.climatology()?)?, seed, &dir),
        EnvName::EbmV1 => infer_single(cfg, make_ebm_env(EbmVariant::V1, inputs.climatology()?)?, seed, &dir),
        EnvName::EbmV2 | EnvName::EbmV3 => infer_federated(cfg, inputs.climatology()?, seed, &dir),
    }
}

fn load_params(path: &Path) -> Result<crate::nn::ParamVector> {
    checkpoint::load(path).map(|(_, p)| p).map_err(|e| match e {
        Error::Io(io) => Error::Data {
            path: path.to_path_buf(),
            reason: io.to_string(),
        },
        other => other,
    })
}

fn infer_single<E: Diagnose>(cfg: &RunConfig, mut env: E, seed: u64, dir: &Path) -> Result<InferReport> {
    let mut agent = build_agent(cfg, &env, seed)?;
    agent.set_params(Scope::All, &load_params(&dir.join("final.ckpt"))?)?;
    let episode = run_episode(&mut env, agent.as_mut(), Mode::Infer, inference_seed(seed))?;
    Ok(InferReport {
        episodic_return: episode.episodic_return,
        skill_error: env.skill_error(&episode)?,
        global_skill_error: None,
    })
}

fn infer_federated(cfg: &RunConfig, climatology: Climatology, seed: u64, dir: &Path) -> Result<InferReport> {
    let (setup, _) = fed_setup(&cfg.experiment, climatology)?;
    let mut agents = Vec::with_capacity(setup.regions.n_agents());
    for i in 0..setup.regions.n_agents() {
        let mut a = make_agent(
            cfg.algo,
            setup.obs_dim(i),
            setup.action_dim(i),
            &cfg.hyperparameters,
            seed,
        )?;
        a.set_params(Scope::All, &load_params(&dir.join(format!("agent-{i}.ckpt")))?)?;
        agents.push(a);
    }
    let label = cfg.experiment.to_string();
    let local = rollout(&setup, label.as_str(), inference_seed(seed), &mut |i, obs| {
        agents[i].act(obs, Mode::Infer)
    })?;
    let mut rounds: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("round-"))
        })
        .collect();
    rounds.sort();
    let global = match rounds.last() {
        Some(last) => {
            let a = &mut agents[0];
            a.set_params(Scope::All, &load_params(last)?)?;
            let g = rollout(
                &setup,
                format!("{label}-GLOBAL"),
                inference_seed(seed),
                &mut |_, obs| a.act(obs, Mode::Infer),
            )?;
            Some(g.total_rmse)
        }
        None => None,
    };
    Ok(InferReport {
        episodic_return: local.episodic_return,
        skill_error: local.total_rmse,
        global_skill_error: global,
    })
}

pub fn fed_setup(id: &ExperimentId, climatology: Climatology) -> Result<(FedSetup, AggregationPolicy)> {
    let (topology, fed) = id
        .env
        .topology()
        .zip(id.fed)
        .ok_or_else(|| Error::Config(format!("{id} is not a federated experiment")))?;
    let setup = FedSetup::new(topology, fed.n_agents, climatology)?;
    let policy = match fed.mode.period() {
        Some(k) => AggregationPolicy::every(k)?,
        None => AggregationPolicy::nofed(),
    };
    Ok((setup, policy))
}

fn run_federated(cfg: &RunConfig, climatology: Climatology, seed: u64, dir: &Path) -> Result<SeedArtifacts> {
    let (setup, policy) = fed_setup(&cfg.experiment, climatology)?;
    let episodes = cfg.total_steps / crate::ebm::EPISODE_LENGTH;
    let mut outcome = fed_train(&setup, cfg.algo, &cfg.hyperparameters, policy, episodes, seed)?;
    let mut episodes_log = BufWriter::new(File::create(dir.join("episodes.jsonl"))?);
    for (episode, (step, ret)) in outcome.curve.points().iter().enumerate() {
        let per_agent: Vec<f64> = outcome.agent_curves.iter().map(|c| c.points()[episode].1).collect();
        serde_json::to_writer(
            &mut episodes_log,
            &serde_json::json!({"episode": episode, "step": step, "episodic_return": ret, "agent_returns": per_agent}),
        )?;
        episodes_log.write_all(b"\n")?;
    }
    episodes_log.flush()?;
    for (k, c) in outcome.agent_curves.iter().enumerate() {
        write_curve(&dir.join(format!("agent-{k}-curve.csv")), c)?;
    }
    let label = cfg.experiment.to_string();
    for g in &outcome.history {
        let tag = format!("{label} {} seed {seed} round {}", cfg.algo, g.source_round);
        checkpoint::save(&dir.join(format!("round-{:03}.ckpt", g.source_round)), &tag, &g.weights)?;
    }
    for (k, m) in outcome.members.iter().enumerate() {
        let tag = format!("{label} {} seed {seed} agent {k}", cfg.algo);
        checkpoint::save(&dir.join(format!("agent-{k}.ckpt")), &tag, &m.agent.params(Scope::All))?;
    }
    let local = local_rollout(&mut outcome, &setup, &label, inference_seed(seed))?;
    write_rollout(dir, "zonal.csv", &local)?;
    let global = if outcome.global_policy().is_some() {
        let g = global_policy_rollout(&mut outcome, &setup, &label, inference_seed(seed))?;
        write_rollout(dir, "zonal-global.csv", &g)?;
        Some(g.total_rmse)
    } else {
        None
    };
    Ok(SeedArtifacts {
        curve: outcome.curve,
        skill_error: local.total_rmse,
        global_skill_error: global,
    })
}

fn write_rollout(dir: &Path, name: &str, report: &RolloutReport) -> Result<()> {
    let bands = ZonalBands::standard(&LatGrid::standard());
    let rows: Vec<ZonalRow> = bands
        .labels
        .iter()
        .zip(&report.band_rmse)
        .zip(&report.band_bias)
        .map(|((band, rmse), bias)| ZonalRow {
            band: band.clone(),
            rmse: *rmse,
            bias: *bias,
        })
        .collect();
    write_zonal(&dir.join(name), &rows)
}
