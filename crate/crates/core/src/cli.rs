//! The `kalman-affine` command line.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::calibration::{self, fit_metrics_with, ApeDenominator, CalibrationResult, FitMetrics, GradientMode};
use crate::error::{Error, Result};
use crate::io::{self, ModelConfig, ResultBundle};
use crate::kalman::{self, FilterOutput, YieldPanel};
use crate::scenario::{self, ForecastResult};
use crate::term_structure::ModelSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Parser)]
#[command(name = "kalman-affine", version, about = "Kalman-filter calibration of affine short-rate models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a yield panel by maximum likelihood.
    Calibrate(CalibrateArgs),
    /// Run the filter at fixed parameters.
    Filter(FilterArgs),
    /// Monte Carlo forecast of the yield curve.
    Forecast(ForecastArgs),
    /// Generate a synthetic yield panel from the model.
    SimulatePanel(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if needed.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_parser = parse_gradient)]
    pub gradient: Option<GradientMode>,
    #[arg(long, value_parser = parse_denominator)]
    pub ape_denominator: Option<ApeDenominator>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_denominator)]
    pub ape_denominator: Option<ApeDenominator>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start state, one value per factor.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub state: Option<Vec<f64>>,
    /// Start from the last filtered state of this panel.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub percentiles: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Panel CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// First date (ISO-8601); weekdays follow.
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Also write the simulated states to this CSV.
    #[arg(long)]
    pub states: Option<PathBuf>,
}

fn parse_gradient(s: &str) -> std::result::Result<GradientMode, String> {
    match s {
        "analytic" => Ok(GradientMode::Analytic),
        "finite_difference" | "fd" => Ok(GradientMode::FiniteDifference),
        _ => Err(format!("expected 'analytic' or 'finite_difference', got '{s}'")),
    }
}

fn parse_denominator(s: &str) -> std::result::Result<ApeDenominator, String> {
    match s {
        "panel" => Ok(ApeDenominator::Panel),
        "column" => Ok(ApeDenominator::Column),
        _ => Err(format!("expected 'panel' or 'column', got '{s}'")),
    }
}

/// Parses `args` and runs the command, reporting to `out` and `err`.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            let _ = out.write_all(summary.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let Error::CalibrationFailed { diagnostics } = &e {
                for d in diagnostics {
                    let _ = writeln!(err, "  {d}");
                }
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Runs one command and returns the summary text.
pub fn execute(cmd: &Command) -> Result<String> {
    match cmd {
        Command::Calibrate(a) => calibrate(a),
        Command::Filter(a) => filter(a),
        Command::Forecast(a) => forecast(a),
        Command::SimulatePanel(a) => simulate(a),
    }
}

fn calibrate(a: &CalibrateArgs) -> Result<String> {
    let cfg = ModelConfig::read(&a.config)?;
    let panel = io::read_panel(&a.panel)?;
    let template = cfg.model_template(Some(&panel.maturities))?;
    let bounds = cfg.bounds(&template)?;
    let mut opts = cfg.calibration_options(&template);
    if let Some(s) = a.starts {
        opts.starts = s;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    if a.workers.is_some() {
        opts.workers = a.workers;
    }
    if let Some(m) = a.max_iterations {
        opts.optimizer.max_iterations = m;
    }
    if let Some(g) = a.gradient {
        opts.gradient = g;
    }
    if let Some(d) = a.ape_denominator {
        opts.ape_denominator = d;
    }
    let result = calibration::maximize_likelihood(&template, &panel, &bounds, &opts)?;
    let spec = result.theta_opt.apply(&template)?;

    std::fs::create_dir_all(&a.out)?;
    let (out, fit, mut files) = write_filter_files(&a.out, &spec, &panel, opts.ape_denominator)?;
    let forecast = if cfg.forecast.is_some() {
        let mut req = cfg.forecast_request();
        if a.workers.is_some() {
            req.workers = a.workers;
        }
        let x0 = match cfg.forecast_state() {
            Some(s) => state_vector(&spec, &s)?,
            None => last_state(&spec, &out),
        };
        let f = scenario::forecast_curves(&spec, &x0, &req)?;
        files.extend(io::write_forecasts(&a.out, &f)?);
        Some(f)
    } else {
        None
    };
    files.push(BUNDLE_FILE.into());
    let mut text = calibration_summary(&result, &panel.maturities);
    let bundle = ResultBundle {
        command: "calibrate".into(),
        model: spec,
        loglik: Some(result.loglik),
        fit: Some(fit),
        calibration: Some(result),
        forecast,
        files,
    };
    bundle.write(&a.out.join(BUNDLE_FILE))?;
    let _ = writeln!(text, "wrote {}", a.out.display());
    Ok(text)
}

fn filter(a: &FilterArgs) -> Result<String> {
    let cfg = ModelConfig::read(&a.config)?;
    let panel = io::read_panel(&a.panel)?;
    let spec = cfg.model_spec(Some(&panel.maturities))?;
    let denominator = a
        .ape_denominator
        .or(cfg.optimizer.as_ref().and_then(|o| o.ape_denominator))
        .unwrap_or_default();
    std::fs::create_dir_all(&a.out)?;
    let (out, fit, mut files) = write_filter_files(&a.out, &spec, &panel, denominator)?;
    files.push(BUNDLE_FILE.into());
    let mut text = String::new();
    let _ = writeln!(text, "loglik  {:.6}", out.loglik);
    text.push_str(&fit_table(&panel.maturities, &fit));
    let bundle = ResultBundle {
        command: "filter".into(),
        model: spec,
        loglik: Some(out.loglik),
        fit: Some(fit),
        calibration: None,
        forecast: None,
        files,
    };
    bundle.write(&a.out.join(BUNDLE_FILE))?;
    let _ = writeln!(text, "wrote {}", a.out.display());
    Ok(text)
}

fn forecast(a: &ForecastArgs) -> Result<String> {
    let cfg = ModelConfig::read(&a.config)?;
    let panel = a.panel.as_deref().map(io::read_panel).transpose()?;
    let spec = cfg.model_spec(panel.as_ref().map(|p| p.maturities.as_slice()))?;
    let mut req = cfg.forecast_request();
    if let Some(h) = &a.horizons {
        req.horizons = h.clone();
    }
    if let Some(p) = a.paths {
        req.paths = p;
    }
    if let Some(p) = &a.percentiles {
        req.percentiles = p.clone();
    }
    if let Some(s) = a.seed {
        req.seed = s;
    }
    if a.workers.is_some() {
        req.workers = a.workers;
    }
    let x0 = match (&a.state, cfg.forecast_state(), &panel) {
        (Some(s), _, _) => state_vector(&spec, s)?,
        (None, Some(s), _) => state_vector(&spec, &s)?,
        (None, None, Some(p)) => last_state(&spec, &kalman::filter(&spec, p)?),
        (None, None, None) => DVector::from_iterator(spec.dim(), spec.factors.iter().map(|f| f.params.eta)),
    };
    let f = scenario::forecast_curves(&spec, &x0, &req)?;
    std::fs::create_dir_all(&a.out)?;
    let mut files = io::write_forecasts(&a.out, &f)?;
    files.push(BUNDLE_FILE.into());
    let text = forecast_summary(&f);
    let bundle = ResultBundle {
        command: "forecast".into(),
        model: spec,
        loglik: None,
        fit: None,
        calibration: None,
        forecast: Some(f),
        files,
    };
    bundle.write(&a.out.join(BUNDLE_FILE))?;
    Ok(format!("{text}wrote {}\n", a.out.display()))
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let cfg = ModelConfig::read(&a.config)?;
    let spec = cfg.simulation_spec(None)?;
    let sim = cfg.simulate.as_ref();
    let days = a
        .days
        .or(sim.and_then(|s| s.days))
        .ok_or_else(|| Error::Config("the number of days is required (--days or [simulate].days)".into()))?;
    let seed = a.seed.or(sim.and_then(|s| s.seed)).unwrap_or(0);
    let start = a
        .start
        .or(sim.and_then(|s| s.start))
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"));
    let out = scenario::simulate_panel(&spec, days, seed, start)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_panel_file(&out.panel, &a.out)?;
    if let Some(path) = &a.states {
        io::write_states(path, &out.panel, &out.states)?;
    }
    Ok(format!("wrote {} ({days} days)\n", a.out.display()))
}

fn state_vector(spec: &ModelSpec, s: &[f64]) -> Result<DVector<f64>> {
    if s.len() != spec.dim() {
        return Err(Error::Config(format!("state has {} values, the model has {} factors", s.len(), spec.dim())));
    }
    Ok(DVector::from_column_slice(s))
}

fn last_state(spec: &ModelSpec, out: &FilterOutput) -> DVector<f64> {
    out.steps
        .last()
        .map(|s| s.x_filt.clone())
        .unwrap_or_else(|| DVector::from_iterator(spec.dim(), spec.factors.iter().map(|f| f.params.eta)))
}

fn write_filter_files(
    dir: &Path,
    spec: &ModelSpec,
    panel: &YieldPanel,
    denominator: ApeDenominator,
) -> Result<(FilterOutput, FitMetrics, Vec<String>)> {
    let out = kalman::filter(spec, panel)?;
    let fitted = kalman::fitted_yields(spec, &out)?;
    let fit = fit_metrics_with(panel, &fitted, denominator)?;
    io::write_factors(&dir.join("factors.csv"), panel, &out)?;
    io::write_yield_table(&dir.join("fitted.csv"), panel, &fitted, false)?;
    io::write_yield_table(&dir.join("residuals.csv"), panel, &io::residuals(panel, &fitted), true)?;
    Ok((out, fit, vec!["factors.csv".into(), "fitted.csv".into(), "residuals.csv".into()]))
}

/// Loglik, AIC, optimality, parameters and the fit table.
pub fn calibration_summary(r: &CalibrationResult, maturities: &[f64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "loglik                  {:.6}", r.loglik);
    let _ = writeln!(s, "AIC                     {:.3e}", r.aic);
    let _ = writeln!(s, "BIC                     {:.3e}", r.bic);
    let _ = writeln!(s, "first-order optimality  {:.3e}", r.first_order_optimality);
    let _ = writeln!(s, "starts converged        {}/{}", r.starts_converged, r.n_starts);
    let hits = if r.boundary_hits.is_empty() {
        "none".to_string()
    } else {
        r.boundary_hits.join(", ")
    };
    let _ = writeln!(s, "boundary hits           {hits}");
    let _ = writeln!(s, "{:<12}{:>16}{:>14}", "parameter", "estimate", "std error");
    for (i, label) in r.labels.iter().enumerate() {
        let se = r.std_errors[i].map_or("-".to_string(), |v| format!("{v:.4e}"));
        let _ = writeln!(s, "{label:<12}{:>16.6e}{se:>14}", r.theta_opt.values[i]);
    }
    let fit = FitMetrics {
        ape: r.ape_total,
        rmse: r.rmse_total,
        ape_by_maturity: r.ape_by_maturity.clone(),
        rmse_by_maturity: r.rmse_by_maturity.clone(),
    };
    s.push_str(&fit_table(maturities, &fit));
    s
}

/// APE in percentage points and RMSE in basis points, per maturity and total.
pub fn fit_table(maturities: &[f64], fit: &FitMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12}{:>10}{:>10}", "maturity", "APE (%)", "RMSE (bp)");
    for (j, m) in maturities.iter().enumerate() {
        let _ = writeln!(s, "{:<12}{:>10.3}{:>10.3}", m.to_string(), 100.0 * fit.ape_by_maturity[j], 1e4 * fit.rmse_by_maturity[j]);
    }
    let _ = writeln!(s, "{:<12}{:>10.3}{:>10.3}", "total", 100.0 * fit.ape, 1e4 * fit.rmse);
    s
}

fn forecast_summary(f: &ForecastResult) -> String {
    let mut s = String::new();
    for h in &f.horizons {
        let _ = writeln!(s, "horizon {} days", h.horizon);
        for (j, m) in f.maturities.iter().enumerate() {
            let bands: Vec<String> = h.percentiles.iter().map(|p| format!("{:.5}", p[j])).collect();
            let _ = writeln!(s, "  {m:<8}{:>10.5}  [{}]", h.mean[j], bands.join(", "));
        }
    }
    s
}
