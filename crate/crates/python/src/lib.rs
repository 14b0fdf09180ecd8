use std::path::PathBuf;

use chrono::NaiveDate;
use kalman_affine::calibration::{fit_metrics, maximize_likelihood};
use kalman_affine::io::{read_panel, write_panel_file, ModelConfig};
use kalman_affine::kalman::{filtered_short_rate, fitted_yields};
use kalman_affine::scenario::{forecast_curves, simulate_panel as simulate};
use kalman_affine::sensitivities::{loglik_and_gradient, loglik_hessian as hessian};
use kalman_affine::{
    Bounds, CalibrationOptions, CalibrationResult as CoreResult, FactorKind, FactorParams, ForecastRequest,
    ModelSpec as CoreSpec, ParamVector, YieldPanel as CorePanel,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: kalman_affine::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_kind(kind: &str) -> PyResult<FactorKind> {
    match kind.to_ascii_lowercase().as_str() {
        "vasicek" => Ok(FactorKind::Vasicek),
        "cir" => Ok(FactorKind::Cir),
        other => Err(PyValueError::new_err(format!("unknown factor kind {other:?}, expected vasicek or cir"))),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| PyValueError::new_err(format!("bad date {s:?}: {e}")))
}

/// One Vasicek or CIR factor.
#[pyclass(module = "kalman_affine", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Factor {
    inner: kalman_affine::Factor,
}

#[pymethods]
impl Factor {
    #[new]
    #[pyo3(signature = (kind, kappa, eta, theta, eta_fixed_zero = false))]
    fn new(kind: &str, kappa: f64, eta: f64, theta: f64, eta_fixed_zero: bool) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let params = if eta_fixed_zero {
            if eta != 0.0 {
                return Err(PyValueError::new_err("a pinned eta must be 0"));
            }
            FactorParams::zero_mean(kappa, theta)
        } else {
            FactorParams::new(kappa, eta, theta)
        };
        params.validate(kind).map_err(to_py)?;
        Ok(Factor {
            inner: kalman_affine::Factor { kind, params },
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.params.kappa
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.params.eta
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.params.theta
    }

    #[getter]
    fn eta_fixed_zero(&self) -> bool {
        self.inner.params.eta_fixed_zero
    }

    fn feller_condition(&self) -> bool {
        self.inner.params.feller_condition()
    }

    /// Zero-coupon price `exp(a(t) + b(t) r)` for a maturity `t` in years.
    fn zero_coupon_price(&self, t: f64, r: f64) -> PyResult<f64> {
        Ok(kalman_affine::factor::loadings(self.inner.kind, t, &self.inner.params)
            .map_err(to_py)?
            .price(r))
    }

    fn __repr__(&self) -> String {
        let p = &self.inner.params;
        format!("Factor({:?}, kappa={}, eta={}, theta={})", self.kind(), p.kappa, p.eta, p.theta)
    }
}

#[pyclass(module = "kalman_affine", frozen, skip_from_py_object)]
#[derive(Clone)]
struct ModelSpec {
    inner: CoreSpec,
}

#[pymethods]
impl ModelSpec {
    #[new]
    #[pyo3(signature = (factors, sigma_eps, maturities, dt = kalman_affine::DEFAULT_DT))]
    fn new(factors: Vec<PyRef<'_, Factor>>, sigma_eps: f64, maturities: Vec<f64>, dt: f64) -> PyResult<Self> {
        let factors = factors.iter().map(|f| f.inner).collect();
        Ok(ModelSpec {
            inner: CoreSpec::new(factors, sigma_eps, dt, maturities).map_err(to_py)?,
        })
    }

    /// Reads a TOML model file whose parameters are all given.
    #[staticmethod]
    #[pyo3(signature = (path, maturities = None))]
    fn from_config(path: PathBuf, maturities: Option<Vec<f64>>) -> PyResult<Self> {
        let cfg = ModelConfig::read(&path).map_err(to_py)?;
        Ok(ModelSpec {
            inner: cfg.model_spec(maturities.as_deref()).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(ModelSpec { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn factors(&self) -> Vec<Factor> {
        self.inner.factors.iter().map(|&inner| Factor { inner }).collect()
    }

    #[getter]
    fn sigma_eps(&self) -> f64 {
        self.inner.sigma_eps
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn maturities(&self) -> Vec<f64> {
        self.inner.maturities.clone()
    }

    /// Free parameters in estimation order.
    fn params(&self) -> Vec<f64> {
        ParamVector::from_spec(&self.inner).values
    }

    fn labels(&self) -> Vec<String> {
        ParamVector::from_spec(&self.inner).labels()
    }

    fn with_params(&self, values: Vec<f64>) -> PyResult<Self> {
        let theta = ParamVector::from_spec(&self.inner);
        if values.len() != theta.len() {
            return Err(PyValueError::new_err(format!("expected {} parameters, got {}", theta.len(), values.len())));
        }
        Ok(ModelSpec {
            inner: theta.with_values(values).apply(&self.inner).map_err(to_py)?,
        })
    }

    /// Model yields for a state vector.
    fn yields(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        let y = kalman_affine::term_structure::model_yields(&self.inner, &DVector::from_vec(state)).map_err(to_py)?;
        Ok(y.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec({} factors, sigma_eps={}, maturities={:?})",
            self.inner.dim(),
            self.inner.sigma_eps,
            self.inner.maturities
        )
    }
}

/// Daily yields, one row per date; `None` marks a missing quote.
#[pyclass(module = "kalman_affine", frozen, skip_from_py_object)]
#[derive(Clone)]
struct YieldPanel {
    inner: CorePanel,
}

#[pymethods]
impl YieldPanel {
    #[new]
    fn new(dates: Vec<String>, maturities: Vec<f64>, yields: Vec<Vec<Option<f64>>>) -> PyResult<Self> {
        let dates = dates.iter().map(|d| parse_date(d)).collect::<PyResult<Vec<_>>>()?;
        let n = maturities.len();
        if let Some(bad) = yields.iter().position(|r| r.len() != n) {
            return Err(PyValueError::new_err(format!("row {bad} has {} values, expected {n}", yields[bad].len())));
        }
        let t = yields.len();
        let values = DMatrix::from_fn(t, n, |i, j| yields[i][j].unwrap_or(0.0));
        let mask = DMatrix::from_fn(t, n, |i, j| yields[i][j].is_some());
        let mask = (!mask.iter().all(|&m| m)).then_some(mask);
        Ok(YieldPanel {
            inner: CorePanel::with_mask(dates, maturities, values, mask).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(YieldPanel {
            inner: read_panel(&path).map_err(to_py)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_panel_file(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates.iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn maturities(&self) -> Vec<f64> {
        self.inner.maturities.clone()
    }

    #[getter]
    fn yields(&self) -> Vec<Vec<Option<f64>>> {
        let p = &self.inner;
        (0..p.n_days())
            .map(|t| {
                (0..p.n_maturities())
                    .map(|j| p.is_observed(t, j).then(|| p.yields[(t, j)]))
                    .collect()
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.n_days()
    }
}

#[pyclass(module = "kalman_affine", frozen, skip_from_py_object)]
struct CalibrationResult {
    inner: CoreResult,
    spec: CoreSpec,
}

#[pymethods]
impl CalibrationResult {
    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.theta_opt.values.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.inner.loglik
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }

    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }

    #[getter]
    fn gradient(&self) -> Vec<f64> {
        self.inner.gradient_at_opt.clone()
    }

    #[getter]
    fn first_order_optimality(&self) -> f64 {
        self.inner.first_order_optimality
    }

    #[getter]
    fn hessian(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.hessian.clone()
    }

    #[getter]
    fn std_errors(&self) -> Vec<Option<f64>> {
        self.inner.std_errors.clone()
    }

    #[getter]
    fn ape(&self) -> f64 {
        self.inner.ape_total
    }

    #[getter]
    fn rmse(&self) -> f64 {
        self.inner.rmse_total
    }

    #[getter]
    fn starts_converged(&self) -> usize {
        self.inner.starts_converged
    }

    #[getter]
    fn boundary_hits(&self) -> Vec<String> {
        self.inner.boundary_hits.clone()
    }

    /// The model at the estimate.
    fn spec(&self) -> ModelSpec {
        ModelSpec { inner: self.spec.clone() }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pyfunction]
fn loglik(spec: &ModelSpec, panel: &YieldPanel) -> PyResult<f64> {
    kalman_affine::kalman::loglik(&spec.inner, &panel.inner).map_err(to_py)
}

/// `(loglik, gradient)` with respect to `spec.params()`.
#[pyfunction]
fn loglik_gradient(spec: &ModelSpec, panel: &YieldPanel) -> PyResult<(f64, Vec<f64>)> {
    let theta = ParamVector::from_spec(&spec.inner);
    let (ll, g) = loglik_and_gradient(&spec.inner, &panel.inner, &theta).map_err(to_py)?;
    Ok((ll, g.iter().copied().collect()))
}

type HessianParts = (f64, Vec<f64>, Vec<Vec<f64>>, f64);

/// `(loglik, gradient, hessian, asymmetry)`.
#[pyfunction]
fn loglik_hessian(spec: &ModelSpec, panel: &YieldPanel) -> PyResult<HessianParts> {
    let theta = ParamVector::from_spec(&spec.inner);
    let out = hessian(&spec.inner, &panel.inner, &theta).map_err(to_py)?;
    Ok((out.loglik, out.gradient.iter().copied().collect(), rows(&out.hessian), out.asymmetry))
}

/// Runs the filter; returns loglik, filtered states, fitted yields, the short
/// rate and the fit metrics.
#[pyfunction]
fn filter<'py>(py: Python<'py>, spec: &ModelSpec, panel: &YieldPanel) -> PyResult<Bound<'py, PyDict>> {
    let out = kalman_affine::kalman::filter(&spec.inner, &panel.inner).map_err(to_py)?;
    let fitted = fitted_yields(&spec.inner, &out).map_err(to_py)?;
    let metrics = fit_metrics(&panel.inner, &fitted).map_err(to_py)?;
    let states: Vec<Vec<f64>> = out.filtered_states().map(|x| x.iter().copied().collect()).collect();
    let d = PyDict::new(py);
    d.set_item("loglik", out.loglik)?;
    d.set_item("states", states)?;
    d.set_item("short_rate", filtered_short_rate(&out))?;
    d.set_item("fitted", rows(&fitted))?;
    d.set_item("ape", metrics.ape)?;
    d.set_item("rmse", metrics.rmse)?;
    d.set_item("ape_by_maturity", metrics.ape_by_maturity)?;
    d.set_item("rmse_by_maturity", metrics.rmse_by_maturity)?;
    Ok(d)
}

/// Multi-start maximum likelihood from `spec`'s structure; its values are
/// used as the first start when `use_spec_as_start` is true.
#[pyfunction]
#[pyo3(signature = (spec, panel, starts = 8, seed = 0, workers = None, max_iterations = None, lower = None, upper = None, use_spec_as_start = false))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    spec: &ModelSpec,
    panel: &YieldPanel,
    starts: usize,
    seed: u64,
    workers: Option<usize>,
    max_iterations: Option<usize>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    use_spec_as_start: bool,
) -> PyResult<CalibrationResult> {
    let defaults = Bounds::default_for(&spec.inner);
    let bounds = Bounds::new(lower.unwrap_or(defaults.lower), upper.unwrap_or(defaults.upper)).map_err(to_py)?;
    let mut opts = CalibrationOptions {
        starts,
        seed,
        workers,
        initial: use_spec_as_start.then(|| ParamVector::from_spec(&spec.inner).values),
        ..CalibrationOptions::default()
    };
    if let Some(n) = max_iterations {
        opts.optimizer.max_iterations = n;
    }
    let (template, data) = (spec.inner.clone(), panel.inner.clone());
    let result = py
        .detach(|| maximize_likelihood(&template, &data, &bounds, &opts))
        .map_err(to_py)?;
    let fitted = result.theta_opt.apply(&template).map_err(to_py)?;
    Ok(CalibrationResult {
        inner: result,
        spec: fitted,
    })
}

/// Monte Carlo curve forecast from `state`. Returns maturities, levels and
/// per-horizon mean and percentile curves.
#[pyfunction]
#[pyo3(signature = (spec, state, horizons = None, paths = 10_000, percentiles = None, seed = 0, workers = None))]
#[allow(clippy::too_many_arguments)]
fn forecast<'py>(
    py: Python<'py>,
    spec: &ModelSpec,
    state: Vec<f64>,
    horizons: Option<Vec<usize>>,
    paths: usize,
    percentiles: Option<Vec<f64>>,
    seed: u64,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let defaults = ForecastRequest::default();
    let req = ForecastRequest {
        horizons: horizons.unwrap_or(defaults.horizons),
        paths,
        percentiles: percentiles.unwrap_or(defaults.percentiles),
        seed,
        keep_states: false,
        workers,
    };
    let model = spec.inner.clone();
    let x0 = DVector::from_vec(state);
    let f = py.detach(|| forecast_curves(&model, &x0, &req)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("maturities", f.maturities)?;
    d.set_item("levels", f.levels)?;
    let mut out = Vec::with_capacity(f.horizons.len());
    for h in f.horizons {
        let e = PyDict::new(py);
        e.set_item("horizon", h.horizon)?;
        e.set_item("mean", h.mean)?;
        e.set_item("percentiles", h.percentiles)?;
        out.push(e);
    }
    d.set_item("horizons", out)?;
    Ok(d)
}

/// Simulated `(panel, states)` of `days` business days from `start`.
#[pyfunction]
#[pyo3(signature = (spec, days, seed = 0, start = "2000-01-03"))]
fn simulate_panel(spec: &ModelSpec, days: usize, seed: u64, start: &str) -> PyResult<(YieldPanel, Vec<Vec<f64>>)> {
    let sim = simulate(&spec.inner, days, seed, parse_date(start)?).map_err(to_py)?;
    Ok((YieldPanel { inner: sim.panel }, rows(&sim.states)))
}

#[pymodule]
#[pyo3(name = "kalman_affine")]
fn kalman_affine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Factor>()?;
    m.add_class::<ModelSpec>()?;
    m.add_class::<YieldPanel>()?;
    m.add_class::<CalibrationResult>()?;
    m.add_function(wrap_pyfunction!(loglik, m)?)?;
    m.add_function(wrap_pyfunction!(loglik_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(loglik_hessian, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(forecast, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_panel, m)?)?;
    Ok(())
}
