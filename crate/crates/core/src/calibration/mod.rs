//! Box-constrained multi-start maximum likelihood, standard errors and fit
//! diagnostics.

mod bounds;
pub mod lbfgs;
mod metrics;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{self, YieldPanel};
use crate::sensitivities::{self, ParamVector};
use crate::term_structure::ModelSpec;

pub use bounds::{default_factor_bounds, Bounds, SIGMA_EPS_BOUNDS};
pub use lbfgs::{LbfgsOptions, Termination};
pub use metrics::{aic, bic, fit_metrics, fit_metrics_with, standard_errors, ApeDenominator, FitMetrics};

/// Source of the gradient used by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences of the log-likelihood in log-parameter space.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub starts: usize,
    pub seed: u64,
    pub optimizer: LbfgsOptions,
    /// Used as start 0 when given; the remaining starts are random.
    pub initial: Option<Vec<f64>>,
    pub gradient: GradientMode,
    pub ape_denominator: ApeDenominator,
    /// Worker threads for the starts; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            starts: 8,
            seed: 0,
            optimizer: LbfgsOptions::default(),
            initial: None,
            gradient: GradientMode::Analytic,
            ape_denominator: ApeDenominator::Panel,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartDiagnostics {
    pub index: usize,
    pub start: Vec<f64>,
    pub theta: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta_opt: ParamVector,
    pub labels: Vec<String>,
    pub loglik: f64,
    pub gradient_at_opt: Vec<f64>,
    /// `|projected gradient|_inf` in parameter units at `theta_opt`.
    pub first_order_optimality: f64,
    pub hessian: Option<Vec<Vec<f64>>>,
    pub hessian_asymmetry: Option<f64>,
    /// `None` where the variance estimate is not positive.
    pub std_errors: Vec<Option<f64>>,
    pub n_params: usize,
    pub n_observations: usize,
    pub aic: f64,
    pub bic: f64,
    pub ape_total: f64,
    pub rmse_total: f64,
    pub ape_by_maturity: Vec<f64>,
    pub rmse_by_maturity: Vec<f64>,
    pub n_starts: usize,
    pub starts_converged: usize,
    pub boundary_hits: Vec<String>,
    pub starts: Vec<StartDiagnostics>,
}

const BOUNDARY_TOL: f64 = 1e-10;

/// Log-parameter coordinates `y = ln(theta)` clipped to the log box.
struct LogBox<'a> {
    bounds: &'a Bounds,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> LogBox<'a> {
    fn new(bounds: &'a Bounds) -> Self {
        LogBox {
            bounds,
            lo: bounds.lower.iter().map(|v| v.ln()).collect(),
            hi: bounds.upper.iter().map(|v| v.ln()).collect(),
        }
    }

    fn theta(&self, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|i| {
                if y[i] <= self.lo[i] {
                    self.bounds.lower[i]
                } else if y[i] >= self.hi[i] {
                    self.bounds.upper[i]
                } else {
                    y[i].exp().clamp(self.bounds.lower[i], self.bounds.upper[i])
                }
            })
            .collect()
    }
}

struct Objective<'a> {
    spec: &'a ModelSpec,
    panel: &'a YieldPanel,
    layout: &'a ParamVector,
    boxed: LogBox<'a>,
}

impl Objective<'_> {
    fn loglik(&self, theta: &[f64]) -> Option<f64> {
        let spec = self.layout.with_values(theta.to_vec()).apply(self.spec).ok()?;
        kalman::loglik(&spec, self.panel).ok()
    }

    fn value(&self, y: &[f64]) -> Option<f64> {
        self.loglik(&self.boxed.theta(y)).map(|l| -l)
    }

    fn value_grad(&self, y: &[f64], mode: GradientMode) -> Option<(f64, Vec<f64>)> {
        let theta = self.boxed.theta(y);
        match mode {
            GradientMode::Analytic => {
                let (ll, g) = sensitivities::loglik_and_gradient(
                    self.spec,
                    self.panel,
                    &self.layout.with_values(theta.clone()),
                )
                .ok()?;
                Some((-ll, (0..y.len()).map(|i| -theta[i] * g[i]).collect()))
            }
            GradientMode::FiniteDifference => {
                let f0 = self.value(y)?;
                let h = 1e-6;
                let mut g = Vec::with_capacity(y.len());
                for i in 0..y.len() {
                    let mut yp = y.to_vec();
                    let mut ym = y.to_vec();
                    let up = (y[i] + h).min(self.boxed.hi[i]);
                    let down = (y[i] - h).max(self.boxed.lo[i]);
                    yp[i] = up;
                    ym[i] = down;
                    g.push((self.value(&yp)? - self.value(&ym)?) / (up - down));
                }
                Some((f0, g))
            }
        }
    }
}

/// Gradient components that can move `theta` inward for an ascent.
fn projected_ascent_gradient(theta: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let at_lo = (theta[i] - bounds.lower[i]).abs() <= BOUNDARY_TOL;
            let at_hi = (theta[i] - bounds.upper[i]).abs() <= BOUNDARY_TOL;
            if (at_lo && g[i] < 0.0) || (at_hi && g[i] > 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn run_start(obj: &Objective, index: usize, start: Vec<f64>, opts: &CalibrationOptions) -> StartDiagnostics {
    let y0: Vec<f64> = start.iter().map(|v| v.ln()).collect();
    let out = lbfgs::minimize(
        |y| obj.value(y),
        |y| obj.value_grad(y, opts.gradient),
        &y0,
        &obj.boxed.lo,
        &obj.boxed.hi,
        &opts.optimizer,
    );
    match out {
        Ok(o) => StartDiagnostics {
            index,
            start,
            theta: Some(obj.boxed.theta(&o.x)),
            loglik: Some(-o.f),
            iterations: o.iterations,
            termination: Some(o.termination),
            converged: o.termination.converged(),
            error: None,
        },
        Err(e) => StartDiagnostics {
            index,
            start,
            theta: None,
            loglik: None,
            iterations: 0,
            termination: None,
            converged: false,
            error: Some(e),
        },
    }
}

/// Start points: `opts.initial` (if any) first, then uniform draws inside
/// the box from one seeded stream.
pub fn start_points(bounds: &Bounds, opts: &CalibrationOptions) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.starts);
    if let Some(init) = &opts.initial {
        if !bounds.contains(init) {
            return Err(Error::invalid("initial parameter values lie outside the bounds"));
        }
        out.push(init.clone());
    }
    while out.len() < opts.starts {
        out.push(bounds.sample(&mut rng));
    }
    Ok(out)
}

pub fn maximize_likelihood(
    spec: &ModelSpec,
    panel: &YieldPanel,
    bounds: &Bounds,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    spec.validate()?;
    panel.validate()?;
    panel.check_against(spec)?;
    if opts.starts == 0 {
        return Err(Error::invalid("at least one start is required"));
    }
    let layout = ParamVector::from_spec(spec);
    bounds.check(&layout)?;
    let starts = start_points(bounds, opts)?;
    let obj = Objective {
        spec,
        panel,
        layout: &layout,
        boxed: LogBox::new(bounds),
    };
    let run_all = || -> Vec<StartDiagnostics> {
        starts
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_start(&obj, i, s.clone(), opts))
            .collect()
    };
    let diagnostics = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let mut best: Option<&StartDiagnostics> = None;
    for d in &diagnostics {
        if let (Some(ll), Some(_)) = (d.loglik, &d.theta) {
            if best.is_none_or(|b| ll > b.loglik.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(d);
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::CalibrationFailed {
            diagnostics: diagnostics
                .iter()
                .map(|d| format!("start {}: {}", d.index, d.error.as_deref().unwrap_or("no result")))
                .collect(),
        });
    };
    let theta = layout.with_values(best.theta.clone().unwrap_or_default());
    let fitted_spec = theta.apply(spec)?;
    let (loglik, grad) = sensitivities::loglik_and_gradient(spec, panel, &theta)?;
    let grad: Vec<f64> = grad.iter().copied().collect();
    let first_order_optimality = projected_ascent_gradient(&theta.values, &grad, bounds)
        .iter()
        .fold(0.0, |m: f64, v| m.max(v.abs()));

    let (hessian, hessian_asymmetry, std_errors) = match sensitivities::loglik_hessian(spec, panel, &theta) {
        Ok(h) => (
            Some(h.hessian.row_iter().map(|r| r.iter().copied().collect()).collect()),
            Some(h.asymmetry),
            standard_errors(&h.hessian),
        ),
        Err(_) => (None, None, vec![None; theta.len()]),
    };

    let out = kalman::filter(&fitted_spec, panel)?;
    let fitted = kalman::fitted_yields(&fitted_spec, &out)?;
    let fit = fit_metrics_with(panel, &fitted, opts.ape_denominator)?;
    let n_params = theta.len();
    let n_observations = panel.n_observations();
    let labels = theta.labels();
    let boundary_hits = bounds
        .hits(&theta.values, BOUNDARY_TOL)
        .into_iter()
        .map(|i| labels[i].clone())
        .collect();
    Ok(CalibrationResult {
        labels,
        loglik,
        gradient_at_opt: grad,
        first_order_optimality,
        hessian,
        hessian_asymmetry,
        std_errors,
        n_params,
        n_observations,
        aic: aic(n_params, loglik),
        bic: bic(n_params, n_observations, loglik),
        ape_total: fit.ape,
        rmse_total: fit.rmse,
        ape_by_maturity: fit.ape_by_maturity,
        rmse_by_maturity: fit.rmse_by_maturity,
        n_starts: diagnostics.len(),
        starts_converged: diagnostics.iter().filter(|d| d.converged).count(),
        boundary_hits,
        theta_opt: theta,
        starts: diagnostics,
    })
}
