use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ebm::{Climatology, LatGrid};
use crate::rce::{ColumnGrid, ReferenceProfile};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ClimRow {
    lat_deg: f64,
    temp_c: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    p_hpa: f64,
    temp_k: f64,
}

fn data_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_error(path, e.to_string()))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| data_error(path, e.to_string()))
}

/// Checks a coordinate column against the model grid.
fn check_axis(path: &Path, found: &[f64], expected: &[f64], tol: f64, name: &str) -> Result<()> {
    if found.len() != expected.len() {
        return Err(data_error(
            path,
            format!("{} rows, expected {}", found.len(), expected.len()),
        ));
    }
    if found.iter().any(|v| !v.is_finite()) {
        return Err(data_error(path, format!("non-finite {name}")));
    }
    if found.windows(2).any(|w| w[1] <= w[0]) {
        return Err(data_error(path, format!("{name} must increase strictly")));
    }
    if let Some(i) = (0..found.len()).find(|&i| (found[i] - expected[i]).abs() > tol) {
        return Err(data_error(
            path,
            format!("row {i}: {name} {} is not the grid value {}", found[i], expected[i]),
        ));
    }
    Ok(())
}

/// Reads `lat_deg,temp_c`, one row per grid latitude from south to north.
pub fn load_climatology(path: &Path, grid: &LatGrid) -> Result<Climatology> {
    let rows: Vec<ClimRow> = read_rows(path)?;
    let lats: Vec<f64> = rows.iter().map(|r| r.lat_deg).collect();
    check_axis(path, &lats, grid.centers_deg(), 1e-6, "latitude")?;
    let temps: Vec<f64> = rows.iter().map(|r| r.temp_c).collect();
    if temps.iter().any(|t| !t.is_finite()) {
        return Err(data_error(path, "non-finite temperature"));
    }
    Climatology::new(temps, format!("file: {}", path.display()))
}

pub fn save_climatology(path: &Path, climatology: &Climatology, grid: &LatGrid) -> Result<()> {
    if climatology.temps.len() != grid.len() {
        return Err(Error::dim("climatology", grid.len(), climatology.temps.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    for (lat, t) in grid.centers_deg().iter().zip(&climatology.temps) {
        w.serialize(ClimRow {
            lat_deg: *lat,
            temp_c: *t,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `p_hpa,temp_k` from the top of the column down.
pub fn load_reference(path: &Path, grid: &ColumnGrid) -> Result<ReferenceProfile> {
    let rows: Vec<ProfileRow> = read_rows(path)?;
    let p: Vec<f64> = rows.iter().map(|r| r.p_hpa).collect();
    check_axis(path, &p, grid.p_hpa(), 1e-6, "pressure")?;
    let temps: Vec<f64> = rows.iter().map(|r| r.temp_k).collect();
    if temps.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(data_error(path, "temperatures must be finite and positive"));
    }
    ReferenceProfile::new(temps, format!("file: {}", path.display()))
}

pub fn save_reference(path: &Path, reference: &ReferenceProfile, grid: &ColumnGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (p, t) in grid.p_hpa().iter().zip(&reference.temps) {
        w.serialize(ProfileRow { p_hpa: *p, temp_k: *t })?;
    }
    w.flush()?;
    Ok(())
}
