use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::experiment::{parse_experiment_id, Arch, ExperimentId, Family};
use crate::rl::{Algo, AlgoConfig};
use crate::{Error, Result};

/// Tuned defaults for an environment family, before any file overrides.
pub fn default_hyperparameters(id: &ExperimentId, algo: Algo) -> AlgoConfig {
    let mut cfg = AlgoConfig::default();
    match id.env.family() {
        Family::Scbc => {
            cfg.hidden = vec![32, 32];
            cfg.batch_size = 64;
            cfg.n_critics = 2;
            cfg.rollout_steps = 1000;
        }
        Family::Rce => {
            cfg.hidden = vec![64, 64];
            cfg.batch_size = 64;
            cfg.n_critics = 2;
            cfg.reward_scale = 0.01;
            cfg.learning_starts = 500;
            cfg.rollout_steps = 1000;
        }
        Family::Ebm => {
            cfg.hidden = vec![64, 64];
            cfg.batch_size = 64;
            cfg.n_critics = 2;
            cfg.reward_scale = 0.01;
            cfg.lr_actor = 1e-3;
            cfg.lr_critic = 1e-3;
            cfg.rollout_steps = 1000;
            if algo == Algo::Tqc {
                cfg.lr_actor = 3e-3;
            }
        }
    }
    if algo == Algo::Dpg {
        cfg.learning_starts = 0;
    }
    if id.arch == Arch::Homo64L {
        cfg.hidden = vec![64, 64];
    }
    cfg
}

/// Everything a run needs. Read from TOML:
///
/// ```toml
/// experiment = "scbc-v1-optim-L-60k"
/// algo = "ddpg"
/// seeds = [1, 2, 3]
/// output_dir = "runs"
///
/// [hyperparameters]
/// hidden = [32, 32]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub algo: Algo,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub hyperparameters: AlgoConfig,
    pub output_dir: PathBuf,
    pub climatology: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// Write every n-th step to the step log; 0 turns it off.
    pub log_every: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    algo: String,
    seeds: Option<Vec<u64>>,
    total_steps: Option<usize>,
    output_dir: Option<PathBuf>,
    climatology: Option<PathBuf>,
    reference: Option<PathBuf>,
    log_every: Option<usize>,
    hyperparameters: Option<toml::Table>,
}

pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

impl RunConfig {
    pub fn new(experiment: ExperimentId, algo: Algo) -> Self {
        Self {
            experiment,
            algo,
            seeds: DEFAULT_SEEDS.collect(),
            total_steps: experiment.total_steps(),
            hyperparameters: default_hyperparameters(&experiment, algo),
            output_dir: PathBuf::from("runs"),
            climatology: None,
            reference: None,
            log_every: 1,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let experiment = parse_experiment_id(&raw.experiment)?;
        let algo: Algo = raw.algo.parse()?;
        let mut cfg = Self::new(experiment, algo);
        if let Some(seeds) = raw.seeds {
            cfg.seeds = seeds;
        }
        if let Some(steps) = raw.total_steps {
            cfg.total_steps = steps;
        }
        if let Some(dir) = raw.output_dir {
            cfg.output_dir = dir;
        }
        cfg.climatology = raw.climatology;
        cfg.reference = raw.reference;
        if let Some(n) = raw.log_every {
            cfg.log_every = n;
        }
        if let Some(overrides) = raw.hyperparameters {
            cfg.hyperparameters = merge(&cfg.hyperparameters, overrides)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(reason) => Error::Data {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparameters.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        let length = self.experiment.env.episode_length();
        if self.total_steps == 0 || !self.total_steps.is_multiple_of(length) {
            return Err(Error::Config(format!(
                "total_steps {} must be a positive multiple of the episode length {length}",
                self.total_steps
            )));
        }
        if self.experiment.extended && self.total_steps != self.experiment.total_steps() {
            return Err(Error::Config(format!(
                "{} fixes the budget at {} steps, got {}",
                self.experiment,
                self.experiment.total_steps(),
                self.total_steps
            )));
        }
        if self.experiment.fed.is_some() && !self.algo.off_policy() && self.algo != Algo::Dpg {
            return Err(Error::Config(format!(
                "{} is not supported in federated runs",
                self.algo
            )));
        }
        Ok(())
    }

    /// `<output>/<experiment>/<algo>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.experiment.to_string()).join(self.algo.name())
    }
}

fn merge(base: &AlgoConfig, overrides: toml::Table) -> Result<AlgoConfig> {
    let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        table.insert(k, v);
    }
    AlgoConfig::deserialize(table).map_err(|e| Error::Config(format!("hyperparameters: {e}")))
}
