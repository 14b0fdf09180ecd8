//! Kalman filter over a yield panel and the Gaussian innovation likelihood.

use std::borrow::Cow;
use std::f64::consts::PI;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor;
use crate::term_structure::{self, build_state_space, ModelSpec, StateSpaceMatrices};

/// Daily zero-coupon yields (decimal) at a fixed maturity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldPanel {
    pub dates: Vec<NaiveDate>,
    pub maturities: Vec<f64>,
    /// `T x n`, rows are days. Entries where `mask` is false are ignored.
    pub yields: DMatrix<f64>,
    /// `true` where a yield was observed; `None` means fully observed.
    pub mask: Option<DMatrix<bool>>,
}

impl YieldPanel {
    pub fn new(dates: Vec<NaiveDate>, maturities: Vec<f64>, yields: DMatrix<f64>) -> Result<Self> {
        Self::with_mask(dates, maturities, yields, None)
    }

    pub fn with_mask(
        dates: Vec<NaiveDate>,
        maturities: Vec<f64>,
        yields: DMatrix<f64>,
        mask: Option<DMatrix<bool>>,
    ) -> Result<Self> {
        let mask = mask.filter(|m| m.iter().any(|&present| !present));
        let panel = YieldPanel {
            dates,
            maturities,
            yields,
            mask,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        term_structure::validate_maturities(&self.maturities)?;
        if self.yields.nrows() != self.dates.len() || self.yields.ncols() != self.maturities.len() {
            return Err(Error::invalid(format!(
                "yield matrix is {}x{}, expected {}x{}",
                self.yields.nrows(),
                self.yields.ncols(),
                self.dates.len(),
                self.maturities.len()
            )));
        }
        if let Some(m) = &self.mask {
            if m.shape() != self.yields.shape() {
                return Err(Error::invalid("missing-value mask has the wrong shape"));
            }
        }
        for w in self.dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid(format!("dates not strictly increasing at {}", w[1])));
            }
        }
        for t in 0..self.n_days() {
            for j in 0..self.n_maturities() {
                if self.is_observed(t, j) && !self.yields[(t, j)].is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite yield on {} at maturity {}",
                        self.dates[t], self.maturities[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    pub fn is_observed(&self, t: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[(t, j)])
    }

    /// Indices of the observed maturities on day `t`, or `None` if all are.
    pub(crate) fn observed(&self, t: usize) -> Option<Vec<usize>> {
        let m = self.mask.as_ref()?;
        let idx: Vec<usize> = (0..self.n_maturities()).filter(|&j| m[(t, j)]).collect();
        (idx.len() < self.n_maturities()).then_some(idx)
    }

    /// Total count of scalar observations.
    pub fn n_observations(&self) -> usize {
        match &self.mask {
            None => self.yields.len(),
            Some(m) => m.iter().filter(|&&p| p).count(),
        }
    }

    pub(crate) fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let same = self.maturities.len() == spec.maturities.len()
            && self
                .maturities
                .iter()
                .zip(&spec.maturities)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0));
        if !same {
            return Err(Error::invalid("panel maturities differ from the model maturities"));
        }
        Ok(())
    }
}

pub(crate) fn select_rows<'a>(m: &'a DMatrix<f64>, idx: Option<&[usize]>) -> Cow<'a, DMatrix<f64>> {
    match idx {
        None => Cow::Borrowed(m),
        Some(idx) => Cow::Owned(m.select_rows(idx)),
    }
}

pub(crate) fn select_entries<'a>(v: &'a DVector<f64>, idx: Option<&[usize]>) -> Cow<'a, DVector<f64>> {
    match idx {
        None => Cow::Borrowed(v),
        Some(idx) => Cow::Owned(DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))),
    }
}

pub(crate) fn day_observation(panel: &YieldPanel, t: usize) -> DVector<f64> {
    panel.yields.row(t).transpose()
}

/// One filter step. Measurement quantities are restricted to the maturities
/// observed that day (`observed`).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub p_zz: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub x_filt: DVector<f64>,
    pub p_filt: DMatrix<f64>,
    pub observed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub loglik: f64,
    pub steps: Vec<FilterStep>,
}

impl FilterOutput {
    pub fn filtered_states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.steps.iter().map(|s| &s.x_filt)
    }
}

pub(crate) struct InitialState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

pub(crate) fn initial_state(spec: &ModelSpec) -> Result<InitialState> {
    let d = spec.dim();
    let mut x = DVector::zeros(d);
    let mut p = DMatrix::zeros(d, d);
    for (i, f) in spec.factors.iter().enumerate() {
        let m = factor::stationary_init(&f.params, f.kind)?;
        x[i] = m.mean;
        p[(i, i)] = m.variance;
    }
    Ok(InitialState { x, p })
}

/// `(q_level, q_state)` per factor; `Q_ii = q_level + max(x_i, 0) q_state`.
pub(crate) fn noise_parts(spec: &ModelSpec) -> Vec<(f64, f64)> {
    spec.factors
        .iter()
        .map(|f| factor::transition_variance_parts(f.kind, &f.params, spec.dt))
        .collect()
}

pub(crate) fn innovation_factor(s: DMatrix<f64>, panel: &YieldPanel, t: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    s.cholesky().ok_or_else(|| Error::FilterDegenerate {
        date: panel.dates[t].to_string(),
    })
}

pub(crate) fn log_det(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn run(spec: &ModelSpec, panel: &YieldPanel, record: bool) -> Result<FilterOutput> {
    spec.validate()?;
    panel.validate()?;
    panel.check_against(spec)?;
    let ss: StateSpaceMatrices = build_state_space(spec)?;
    let intercept = ss.intercept();
    let noise = noise_parts(spec);
    let phi1 = ss.phi1.diagonal();
    let sigma2 = spec.sigma_eps * spec.sigma_eps;
    let d = spec.dim();

    let InitialState { mut x, mut p } = initial_state(spec)?;
    let mut loglik = 0.0;
    let mut steps = Vec::with_capacity(if record { panel.n_days() } else { 0 });

    for t in 0..panel.n_days() {
        let q = DVector::from_iterator(d, noise.iter().zip(x.iter()).map(|(&(lv, st), &r)| lv + r.max(0.0) * st));
        let x_pred = &ss.phi0 + phi1.component_mul(&x);
        let p_pred = DMatrix::from_fn(d, d, |i, j| phi1[i] * p[(i, j)] * phi1[j]) + DMatrix::from_diagonal(&q);

        let observed = panel.observed(t);
        let idx = observed.as_deref();
        let m = idx.map_or(panel.n_maturities(), |i| i.len());
        if m == 0 {
            if record {
                steps.push(FilterStep {
                    x_pred: x_pred.clone(),
                    p_pred: p_pred.clone(),
                    innovation: DVector::zeros(0),
                    p_zz: DMatrix::zeros(0, 0),
                    gain: DMatrix::zeros(d, 0),
                    x_filt: x_pred.clone(),
                    p_filt: p_pred.clone(),
                    observed: Vec::new(),
                });
            }
            x = x_pred;
            p = p_pred;
            continue;
        }
        let h = select_rows(&ss.h1, idx);
        let c = select_entries(&intercept, idx);
        let z_full = day_observation(panel, t);
        let z = select_entries(&z_full, idx);

        let u = z.as_ref() - (c.as_ref() + h.as_ref() * &x_pred);
        let hp = h.as_ref() * &p_pred;
        let mut s = &hp * h.transpose();
        for k in 0..m {
            s[(k, k)] += sigma2;
        }
        let chol = innovation_factor(s.clone(), panel, t)?;
        let a = chol.solve(&u);
        let gain = chol.solve(&hp).transpose();
        let x_filt = &x_pred + &gain * &u;
        let p_filt = &p_pred - &gain * &hp;
        loglik -= 0.5 * (m as f64 * (2.0 * PI).ln() + log_det(&chol) + u.dot(&a));

        if record {
            steps.push(FilterStep {
                x_pred,
                p_pred,
                innovation: u,
                p_zz: s,
                gain,
                x_filt: x_filt.clone(),
                p_filt: p_filt.clone(),
                observed: observed.unwrap_or_else(|| (0..panel.n_maturities()).collect()),
            });
        }
        x = x_filt;
        p = p_filt;
    }
    if !loglik.is_finite() {
        return Err(Error::FilterDegenerate {
            date: panel.dates.last().map(|d| d.to_string()).unwrap_or_default(),
        });
    }
    Ok(FilterOutput { loglik, steps })
}

pub fn filter(spec: &ModelSpec, panel: &YieldPanel) -> Result<FilterOutput> {
    run(spec, panel, true)
}

/// The filter log-likelihood without per-day records.
pub fn loglik(spec: &ModelSpec, panel: &YieldPanel) -> Result<f64> {
    run(spec, panel, false).map(|o| o.loglik)
}

/// Sum over factors of the filtered states, one entry per day.
pub fn filtered_short_rate(out: &FilterOutput) -> Vec<f64> {
    out.steps.iter().map(|s| s.x_filt.sum()).collect()
}

/// Model yields at each day's filtered state, `T x n`.
pub fn fitted_yields(spec: &ModelSpec, out: &FilterOutput) -> Result<DMatrix<f64>> {
    let ss = build_state_space(spec)?;
    let intercept = ss.intercept();
    let n = spec.n_maturities();
    let mut fitted = DMatrix::zeros(out.steps.len(), n);
    for (t, step) in out.steps.iter().enumerate() {
        let y = &intercept + &ss.h1 * &step.x_filt;
        fitted.set_row(t, &y.transpose());
    }
    Ok(fitted)
}
