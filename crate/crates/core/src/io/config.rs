use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calibration::{ApeDenominator, Bounds, CalibrationOptions, GradientMode, LbfgsOptions};
use crate::error::{Error, Result};
use crate::factor::{Factor, FactorKind, FactorParams};
use crate::scenario::ForecastRequest;
use crate::sensitivities::ParamVector;
use crate::term_structure::{ModelSpec, DEFAULT_DT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub kind: FactorKind,
    #[serde(default)]
    pub eta_fixed_zero: bool,
    pub kappa: Option<f64>,
    pub eta: Option<f64>,
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub grad_tol: Option<f64>,
    pub f_tol: Option<f64>,
    pub memory: Option<usize>,
    pub gradient: Option<GradientMode>,
    pub ape_denominator: Option<ApeDenominator>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizons: Option<Vec<usize>>,
    pub paths: Option<usize>,
    pub percentiles: Option<Vec<f64>>,
    pub seed: Option<u64>,
    /// Start state; defaults to the last filtered state, else the long-run means.
    pub state: Option<Vec<f64>>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub days: Option<usize>,
    pub seed: Option<u64>,
    pub start: Option<NaiveDate>,
}

/// The TOML model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub factors: Vec<FactorConfig>,
    pub dt: Option<f64>,
    pub sigma_eps: Option<f64>,
    /// Required where no panel supplies them.
    pub maturities: Option<Vec<f64>>,
    /// Overrides keyed by parameter label (`kappa_1`, `sigma_eps`, ...).
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    pub optimizer: Option<OptimizerConfig>,
    pub forecast: Option<ForecastConfig>,
    pub simulate: Option<SimulateConfig>,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.factors.is_empty() {
            return Err(Error::Config("at least one factor is required".into()));
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn has_all_values(&self) -> bool {
        self.sigma_eps.is_some()
            && self
                .factors
                .iter()
                .all(|f| f.kappa.is_some() && f.theta.is_some() && (f.eta_fixed_zero || f.eta.is_some()))
    }

    fn factor(&self, i: usize, fallback: bool) -> Result<Factor> {
        let f = &self.factors[i];
        let (lo, hi) = crate::calibration::default_factor_bounds(f.kind);
        let mid = |s: usize| 0.5 * (lo[s] + hi[s]);
        let pick = |v: Option<f64>, s: usize, name: &str| match (v, fallback) {
            (Some(v), _) => Ok(v),
            (None, true) => Ok(mid(s)),
            (None, false) => Err(Error::Config(format!("factor {} needs a value for {name}", i + 1))),
        };
        let kappa = pick(f.kappa, 0, "kappa")?;
        let theta = pick(f.theta, 2, "theta")?;
        let params = if f.eta_fixed_zero {
            if f.eta.is_some_and(|e| e != 0.0) {
                return Err(Error::Config(format!("factor {} pins eta to zero but sets eta", i + 1)));
            }
            FactorParams::zero_mean(kappa, theta)
        } else {
            FactorParams::new(kappa, pick(f.eta, 1, "eta")?, theta)
        };
        Ok(Factor { kind: f.kind, params })
    }

    fn build(&self, maturities: Option<&[f64]>, fallback: bool) -> Result<ModelSpec> {
        let maturities = match (maturities, &self.maturities) {
            (Some(m), Some(c)) => {
                if m.len() != c.len() || m.iter().zip(c).any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0)) {
                    return Err(Error::Config("config maturities differ from the panel header".into()));
                }
                m.to_vec()
            }
            (Some(m), None) => m.to_vec(),
            (None, Some(c)) => c.clone(),
            (None, None) => return Err(Error::Config("maturities are required".into())),
        };
        let factors = (0..self.factors.len())
            .map(|i| self.factor(i, fallback))
            .collect::<Result<Vec<_>>>()?;
        let sigma_eps = match (self.sigma_eps, fallback) {
            (Some(s), _) => s,
            (None, true) => 0.5 * (crate::calibration::SIGMA_EPS_BOUNDS.0 + crate::calibration::SIGMA_EPS_BOUNDS.1),
            (None, false) => return Err(Error::Config("sigma_eps is required".into())),
        };
        ModelSpec::new(factors, sigma_eps, self.dt.unwrap_or(DEFAULT_DT), maturities)
    }

    /// The model with every parameter given in the file.
    pub fn model_spec(&self, maturities: Option<&[f64]>) -> Result<ModelSpec> {
        self.build(maturities, false)
    }

    /// As [`model_spec`](Self::model_spec) but also accepting `sigma_eps = 0`,
    /// for simulation only.
    pub fn simulation_spec(&self, maturities: Option<&[f64]>) -> Result<ModelSpec> {
        if self.sigma_eps == Some(0.0) {
            let mut spec = ModelConfig { sigma_eps: Some(1.0), ..self.clone() }.build(maturities, false)?;
            spec.sigma_eps = 0.0;
            Ok(spec)
        } else {
            self.build(maturities, false)
        }
    }

    /// The model structure for calibration; missing values are placeholders.
    pub fn model_template(&self, maturities: Option<&[f64]>) -> Result<ModelSpec> {
        self.build(maturities, true)
    }

    pub fn bounds(&self, spec: &ModelSpec) -> Result<Bounds> {
        let mut b = Bounds::default_for(spec);
        let labels = ParamVector::from_spec(spec).labels();
        for (key, [lo, hi]) in &self.bounds {
            let i = labels
                .iter()
                .position(|l| l == key)
                .ok_or_else(|| Error::Config(format!("bounds: unknown parameter '{key}' (expected one of {})", labels.join(", "))))?;
            b.set(i, *lo, *hi).map_err(|e| Error::Config(format!("bounds.{key}: {e}")))?;
        }
        Ok(b)
    }

    pub fn calibration_options(&self, spec: &ModelSpec) -> CalibrationOptions {
        let mut o = CalibrationOptions::default();
        let d = LbfgsOptions::default();
        if let Some(c) = &self.optimizer {
            o.starts = c.starts.unwrap_or(o.starts);
            o.seed = c.seed.unwrap_or(o.seed);
            o.optimizer = LbfgsOptions {
                max_iterations: c.max_iterations.unwrap_or(d.max_iterations),
                memory: c.memory.unwrap_or(d.memory),
                grad_tol: c.grad_tol.unwrap_or(d.grad_tol),
                f_tol: c.f_tol.unwrap_or(d.f_tol),
            };
            o.gradient = c.gradient.unwrap_or_default();
            o.ape_denominator = c.ape_denominator.unwrap_or_default();
            o.workers = c.workers;
        }
        if self.has_all_values() {
            o.initial = Some(ParamVector::from_spec(spec).values);
        }
        o
    }

    pub fn forecast_request(&self) -> ForecastRequest {
        let mut r = ForecastRequest::default();
        if let Some(f) = &self.forecast {
            if let Some(h) = &f.horizons {
                r.horizons = h.clone();
            }
            r.paths = f.paths.unwrap_or(r.paths);
            if let Some(p) = &f.percentiles {
                r.percentiles = p.clone();
            }
            r.seed = f.seed.unwrap_or(r.seed);
            r.workers = f.workers;
        }
        r
    }

    pub fn forecast_state(&self) -> Option<Vec<f64>> {
        self.forecast.as_ref().and_then(|f| f.state.clone())
    }
}
