use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationResult, FitMetrics};
use crate::error::{Error, Result};
use crate::kalman::{FilterOutput, YieldPanel};
use crate::scenario::ForecastResult;
use crate::term_structure::ModelSpec;

use super::panel::csv_io;

/// The JSON document written next to the CSV sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub command: String,
    pub model: ModelSpec,
    pub loglik: Option<f64>,
    pub fit: Option<FitMetrics>,
    pub calibration: Option<CalibrationResult>,
    pub forecast: Option<ForecastResult>,
    /// Sidecar file names, relative to the bundle.
    pub files: Vec<String>,
}

impl ResultBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("serialize: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("parse bundle: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `percentile` column name: `p05`, `p95`, `p2_5`.
pub fn percentile_label(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("p{:02}", p as u64)
    } else {
        format!("p{}", p.to_string().replace('.', "_"))
    }
}

/// `date,f1,...,fd,short_rate` at the filtered states.
pub fn write_factors(path: &Path, panel: &YieldPanel, out: &FilterOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let d = out.steps.first().map_or(0, |s| s.x_filt.len());
    let mut header = vec!["date".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    header.push("short_rate".into());
    w.write_record(&header).map_err(csv_io)?;
    for (t, s) in out.steps.iter().enumerate() {
        let mut row = vec![panel.dates[t].to_string()];
        row.extend(s.x_filt.iter().map(|v| v.to_string()));
        row.push(s.x_filt.sum().to_string());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// `date,x1,...,xd`: the simulated states.
pub fn write_states(path: &Path, panel: &YieldPanel, states: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["date".to_string()];
    header.extend((1..=states.ncols()).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_io)?;
    for t in 0..states.nrows() {
        let mut row = vec![panel.dates[t].to_string()];
        row.extend(states.row(t).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// A `T x n` table keyed by date with maturity headers; cells where the
/// panel is unobserved are left empty when `masked`.
pub fn write_yield_table(path: &Path, panel: &YieldPanel, values: &DMatrix<f64>, masked: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = vec!["date".to_string()];
    header.extend(panel.maturities.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(csv_io)?;
    for t in 0..panel.n_days() {
        let mut row = vec![panel.dates[t].to_string()];
        for j in 0..panel.n_maturities() {
            row.push(if masked && !panel.is_observed(t, j) {
                String::new()
            } else {
                values[(t, j)].to_string()
            });
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Market minus fitted yield at each observed cell (zero elsewhere).
pub fn residuals(panel: &YieldPanel, fitted: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(panel.n_days(), panel.n_maturities(), |t, j| {
        if panel.is_observed(t, j) {
            panel.yields[(t, j)] - fitted[(t, j)]
        } else {
            0.0
        }
    })
}

/// One `forecast_h{h}.csv` per horizon with `maturity,mean,p..` columns.
/// Returns the file names.
pub fn write_forecasts(dir: &Path, f: &ForecastResult) -> Result<Vec<String>> {
    let mut names = Vec::with_capacity(f.horizons.len());
    for h in &f.horizons {
        let name = format!("forecast_h{}.csv", h.horizon);
        let mut w = csv::Writer::from_path(dir.join(&name)).map_err(csv_io)?;
        let mut header = vec!["maturity".to_string(), "mean".to_string()];
        header.extend(f.levels.iter().map(|p| percentile_label(*p)));
        w.write_record(&header).map_err(csv_io)?;
        for (j, m) in f.maturities.iter().enumerate() {
            let mut row = vec![m.to_string(), h.mean[j].to_string()];
            row.extend(h.percentiles.iter().map(|p| p[j].to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        names.push(name);
    }
    Ok(names)
}
