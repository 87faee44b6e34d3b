use std::fs;
use std::path::{Path, PathBuf};

use super::runner::{read_curve, ZonalRow};
use crate::eval::confidence_band;
use crate::{Error, Result};

fn incomplete(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// `seed-*` subdirectories sorted by seed.
pub fn seed_dirs(run_dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(run_dir).map_err(|e| incomplete(run_dir, e.to_string()))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let seed = name
            .to_str()
            .and_then(|n| n.strip_prefix("seed-"))
            .and_then(|s| s.parse::<u64>().ok());
        if let (Some(seed), true) = (seed, entry.path().is_dir()) {
            dirs.push((seed, entry.path()));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(incomplete(run_dir, "no seed directories"));
    }
    Ok(dirs)
}

/// Numeric table with a header, as written by the runner.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| incomplete(path, e.to_string()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| incomplete(path, format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn read_zonal(path: &Path) -> Result<Vec<ZonalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| incomplete(path, e.to_string()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ZonalRow>, _>>()
        .map_err(|e| incomplete(path, e.to_string()))
}

/// Mean and half-width columns across seeds for one series per seed.
fn band(series: &[Vec<f64>], path: &Path) -> Result<Vec<(f64, f64)>> {
    confidence_band(series).map_err(|e| incomplete(path, e.to_string()))
}

/// Writes the plotting tables for a finished run directory
/// (`<output>/<experiment>/<algo>`) and returns their paths:
///
/// * `curves_ci.csv`: mean return and 1.96σ half-width per step;
/// * `zonal_ci.csv` (and `zonal_global_ci.csv`): per-band RMSE and bias;
/// * `actions_ci.csv`: per-step reward, raw actions and physical parameters
///   of the inference episode.
pub fn export_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let seeds = seed_dirs(run_dir)?;
    let mut written = Vec::new();

    let mut curves = Vec::with_capacity(seeds.len());
    for (_, dir) in &seeds {
        let path = dir.join("curve.csv");
        if !path.exists() {
            return Err(incomplete(&path, "missing training curve"));
        }
        curves.push(read_curve(&path)?);
    }
    let steps: Vec<usize> = curves[0].points().iter().map(|p| p.0).collect();
    if curves
        .iter()
        .any(|c| c.points().iter().map(|p| p.0).ne(steps.iter().copied()))
    {
        return Err(incomplete(run_dir, "seeds have different curve steps"));
    }
    let returns: Vec<Vec<f64>> = curves.iter().map(|c| c.returns()).collect();
    let out = run_dir.join("curves_ci.csv");
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["step", "mean", "half_width", "lower", "upper", "n_seeds"])?;
    for (step, (m, h)) in steps.iter().zip(band(&returns, run_dir)?) {
        w.write_record([
            step.to_string(),
            m.to_string(),
            h.to_string(),
            (m - h).to_string(),
            (m + h).to_string(),
            seeds.len().to_string(),
        ])?;
    }
    w.flush()?;
    written.push(out);

    for (file, target) in [
        ("zonal.csv", "zonal_ci.csv"),
        ("zonal-global.csv", "zonal_global_ci.csv"),
    ] {
        let present: Vec<PathBuf> = seeds.iter().map(|(_, d)| d.join(file)).filter(|p| p.exists()).collect();
        if present.is_empty() {
            continue;
        }
        if present.len() != seeds.len() {
            return Err(incomplete(run_dir, format!("{file} missing for some seeds")));
        }
        let tables = present.iter().map(|p| read_zonal(p)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = tables[0].iter().map(|r| r.band.clone()).collect();
        let rmse: Vec<Vec<f64>> = tables.iter().map(|t| t.iter().map(|r| r.rmse).collect()).collect();
        let bias: Vec<Vec<f64>> = tables.iter().map(|t| t.iter().map(|r| r.bias).collect()).collect();
        let out = run_dir.join(target);
        let mut w = csv::Writer::from_path(&out)?;
        w.write_record([
            "band",
            "rmse_mean",
            "rmse_half_width",
            "rmse_best",
            "bias_mean",
            "bias_half_width",
        ])?;
        let (rb, bb) = (band(&rmse, run_dir)?, band(&bias, run_dir)?);
        for (i, label) in labels.iter().enumerate() {
            let best = rmse.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
            w.write_record([
                label.clone(),
                rb[i].0.to_string(),
                rb[i].1.to_string(),
                best.to_string(),
                bb[i].0.to_string(),
                bb[i].1.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(out);
    }

    let present: Vec<PathBuf> = seeds
        .iter()
        .map(|(_, d)| d.join("inference.csv"))
        .filter(|p| p.exists())
        .collect();
    if !present.is_empty() {
        if present.len() != seeds.len() {
            return Err(incomplete(run_dir, "inference.csv missing for some seeds"));
        }
        let tables = present.iter().map(|p| read_table(p)).collect::<Result<Vec<_>>>()?;
        let header = tables[0].0.clone();
        if tables
            .iter()
            .any(|(h, rows)| *h != header || rows.len() != tables[0].1.len())
        {
            return Err(incomplete(run_dir, "inference tables differ in shape"));
        }
        let out = run_dir.join("actions_ci.csv");
        let mut w = csv::Writer::from_path(&out)?;
        let mut head = vec!["step".to_string()];
        for name in &header[1..] {
            head.push(format!("{name}_mean"));
            head.push(format!("{name}_half_width"));
        }
        w.write_record(&head)?;
        let n_rows = tables[0].1.len();
        let mut columns = Vec::with_capacity(header.len() - 1);
        for c in 1..header.len() {
            let series: Vec<Vec<f64>> = tables
                .iter()
                .map(|(_, rows)| rows.iter().map(|r| r[c]).collect())
                .collect();
            columns.push(band(&series, run_dir)?);
        }
        for i in 0..n_rows {
            let mut row = vec![tables[0].1[i][0].to_string()];
            for col in &columns {
                row.push(col[i].0.to_string());
                row.push(col[i].1.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(out);
    }
    Ok(written)
}
