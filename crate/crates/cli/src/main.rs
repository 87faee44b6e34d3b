//! `climrl`: train, evaluate and export climate-control RL experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use climrl::eval::{composite_rank, threshold_table, MetricRecord};
use climrl::io::{export_plot_data, infer_seed, parse_experiment_id, run_experiment, RunConfig, RunSummary};
use climrl::rl::Algo;
use climrl::Error;

/// Overrides the output root when `--out` is absent.
const OUTPUT_ENV: &str = "CLIMRL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "climrl", version, about = "RL-tuned parameters in idealised climate models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single-agent experiment over one or more seeds.
    Train(RunArgs),
    /// Train a federated ebm-v2/ebm-v3 experiment.
    Fed(RunArgs),
    /// Re-run the inference episode of a trained seed from its checkpoint.
    Infer(InferArgs),
    /// Rank the algorithms trained for an experiment.
    Eval(EvalArgs),
    /// Write plotting tables for a finished run.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment code, e.g. scbc-v1-optim-L-60k.
    #[arg(long)]
    exp: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed list such as `1,2,5` or a range `1..10` (inclusive).
    #[arg(long)]
    seeds: Option<String>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV with `lat_deg,temp_c` rows.
    #[arg(long)]
    climatology: Option<PathBuf>,
    /// TOML run configuration; other flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    exp: String,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    climatology: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    exp: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    exp: String,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::ExperimentId { .. } | Error::Data { .. } | Error::Checkpoint(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || config_error(format!("cannot read seeds `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn output_root(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
}

fn build_config(args: RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match (&args.config, &args.exp, &args.algo) {
        (Some(path), _, _) => RunConfig::load(path)?,
        (None, Some(exp), Some(algo)) => RunConfig::new(parse_experiment_id(exp)?, algo.parse()?),
        _ => return Err(config_error("either --config or both --exp and --algo are required")),
    };
    if args.config.is_some() {
        // Flags override the file, rebuilding defaults if the code or algorithm changes.
        if let Some(exp) = &args.exp {
            cfg.experiment = parse_experiment_id(exp)?;
            cfg.total_steps = cfg.experiment.total_steps();
        }
        if let Some(algo) = &args.algo {
            cfg.algo = algo.parse()?;
        }
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = parse_seeds(seeds)?;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
    }
    if let Some(out) = output_root(args.out) {
        cfg.output_dir = out;
    }
    if let Some(path) = args.climatology {
        if !path.exists() {
            return Err(config_error(format!("climatology file {} not found", path.display())));
        }
        cfg.climatology = Some(path);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs, federated: bool) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    match (federated, cfg.experiment.fed.is_some()) {
        (false, true) => {
            return Err(config_error(format!(
                "{} is federated; use `climrl fed`",
                cfg.experiment
            )))
        }
        (true, false) => {
            return Err(config_error(format!(
                "{} is not federated; use `climrl train`",
                cfg.experiment
            )))
        }
        _ => {}
    }
    eprintln!(
        "{} {}: {} steps, seeds {:?} -> {}",
        cfg.experiment,
        cfg.algo,
        cfg.total_steps,
        cfg.seeds,
        cfg.run_dir().display()
    );
    let summary = run_experiment(&cfg)?;
    println!(
        "{:>6} {:>10} {:>14} {:>12} {:>12}",
        "seed", "n_thresh", "final_return", "skill", "global"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for s in &summary.seeds {
        if let Some(e) = &s.error {
            println!("{:>6} failed: {e}", s.seed);
            continue;
        }
        let n = s.metrics.as_ref().and_then(|m| m.n_to_threshold);
        println!(
            "{:>6} {:>10} {:>14} {:>12} {:>12}",
            s.seed,
            n.map_or("-".to_string(), |n| n.to_string()),
            fmt(s.final_return),
            fmt(s.skill_error),
            fmt(s.global_skill_error),
        );
    }
    let failed = summary.seeds.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        return Err(Failure {
            code: 2,
            message: format!("{failed} of {} seeds failed", summary.seeds.len()),
        });
    }
    Ok(())
}

fn infer(args: InferArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(parse_experiment_id(&args.exp)?, args.algo.parse()?),
    };
    cfg.experiment = parse_experiment_id(&args.exp)?;
    cfg.algo = args.algo.parse()?;
    if let Some(out) = output_root(args.out) {
        cfg.output_dir = out;
    }
    cfg.climatology = args.climatology.or(cfg.climatology);
    let report = infer_seed(&cfg, args.seed)?;
    println!(
        "{} {} seed {}: return {:.4}, skill error {:.4}",
        cfg.experiment, cfg.algo, args.seed, report.episodic_return, report.skill_error
    );
    if let Some(g) = report.global_skill_error {
        println!("global policy skill error {g:.4}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let id = parse_experiment_id(&args.exp)?;
    let root = output_root(args.out).unwrap_or_else(|| PathBuf::from("runs"));
    let exp_dir = root.join(id.to_string());
    let mut records: Vec<(String, MetricRecord)> = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&exp_dir)
        .map_err(|e| {
            Failure::from(Error::Data {
                path: exp_dir.clone(),
                reason: e.to_string(),
            })
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.json").exists())
        .collect();
    entries.sort();
    print!("{}", threshold_table());
    for dir in entries {
        let summary = RunSummary::load(&dir)?;
        let skills: Vec<f64> = summary.seeds.iter().filter_map(|s| s.skill_error).collect();
        let best = skills.iter().copied().fold(f64::INFINITY, f64::min);
        println!(
            "{}: {} ok seeds of {}, best skill error {best:.4}",
            summary.algo,
            skills.len(),
            summary.seeds.len()
        );
        if let Some(m) = summary.mean_metrics {
            records.push((summary.algo, m));
        }
    }
    if records.len() < 2 {
        return Err(config_error(format!(
            "{} needs runs of at least two algorithms to rank, found {}",
            exp_dir.display(),
            records.len()
        )));
    }
    let rows = composite_rank(&records)?;
    println!(
        "{:<10} {:>6} {:>6} {:>6} {:>8} {:>6}",
        "algo", "steps", "var", "delta", "penalty", "total"
    );
    let mut w = csv::Writer::from_path(exp_dir.join("ranking.csv")).map_err(Error::from)?;
    for r in &rows {
        println!(
            "{:<10} {:>6.1} {:>6.1} {:>6.1} {:>8} {:>6.1}",
            r.name, r.rank_steps, r.rank_variance, r.rank_delta, r.penalty, r.rank_sum
        );
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let id = parse_experiment_id(&args.exp)?;
    let algo: Algo = args.algo.parse()?;
    let root = output_root(args.out).unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(id.to_string()).join(algo.name());
    for path in export_plot_data(&dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run(a, false),
        Command::Fed(a) => run(a, true),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
