//! Experiment plumbing: experiment codes, run configuration, reference data
//! files, the multi-seed runner and plot-data export.

mod config;
mod data;
mod experiment;
mod export;
mod runner;

pub use config::{default_hyperparameters, RunConfig, DEFAULT_SEEDS};
pub use data::{load_climatology, load_reference, save_climatology, save_reference};
pub use experiment::{parse_experiment_id, Arch, EnvName, ExperimentId, Family, FedMode, FedSpec};
pub use export::{export_plot_data, seed_dirs};
pub use runner::{
    build_agent, fed_setup, infer_seed, inference_seed, read_curve, run_experiment, seed_dir, write_curve, Diagnose,
    InferReport, Inputs, JsonlMonitor, RunSummary, SeedResult, ZonalRow,
};
