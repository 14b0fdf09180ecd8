use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::YieldPanel;

/// Mean yield used to scale the per-maturity APE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApeDenominator {
    /// The mean market yield over the whole panel.
    #[default]
    Panel,
    /// The mean market yield of the maturity's own column.
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub ape: f64,
    pub rmse: f64,
    pub ape_by_maturity: Vec<f64>,
    pub rmse_by_maturity: Vec<f64>,
}

/// `APE = sum |y_mkt - y_mod| / (N ybar)` and `RMSE = sqrt(sum (y_mkt - y_mod)^2 / N)`
/// over the observed cells, in decimal units.
pub fn fit_metrics(panel: &YieldPanel, fitted: &DMatrix<f64>) -> Result<FitMetrics> {
    fit_metrics_with(panel, fitted, ApeDenominator::Panel)
}

pub fn fit_metrics_with(panel: &YieldPanel, fitted: &DMatrix<f64>, denominator: ApeDenominator) -> Result<FitMetrics> {
    let (t_len, n) = panel.yields.shape();
    if fitted.shape() != (t_len, n) {
        return Err(Error::invalid(format!(
            "fitted yields are {}x{}, panel is {t_len}x{n}",
            fitted.nrows(),
            fitted.ncols()
        )));
    }
    let mut abs_col = vec![0.0; n];
    let mut sq_col = vec![0.0; n];
    let mut level_col = vec![0.0; n];
    let mut count_col = vec![0usize; n];
    for j in 0..n {
        for t in 0..t_len {
            if !panel.is_observed(t, j) {
                continue;
            }
            let e = panel.yields[(t, j)] - fitted[(t, j)];
            abs_col[j] += e.abs();
            sq_col[j] += e * e;
            level_col[j] += panel.yields[(t, j)];
            count_col[j] += 1;
        }
    }
    let count: usize = count_col.iter().sum();
    if count == 0 {
        return Err(Error::invalid("panel has no observations"));
    }
    let total = count as f64;
    let ybar = level_col.iter().sum::<f64>() / total;
    if ybar == 0.0 {
        return Err(Error::ApeUndefined);
    }
    let mut ape_by_maturity = Vec::with_capacity(n);
    let mut rmse_by_maturity = Vec::with_capacity(n);
    for j in 0..n {
        let c = count_col[j] as f64;
        let scale = match denominator {
            ApeDenominator::Panel => ybar,
            ApeDenominator::Column => level_col[j] / c,
        };
        if count_col[j] > 0 && scale == 0.0 {
            return Err(Error::ApeUndefined);
        }
        ape_by_maturity.push(abs_col[j] / c / scale);
        rmse_by_maturity.push((sq_col[j] / c).sqrt());
    }
    Ok(FitMetrics {
        ape: abs_col.iter().sum::<f64>() / total / ybar,
        rmse: (sq_col.iter().sum::<f64>() / total).sqrt(),
        ape_by_maturity,
        rmse_by_maturity,
    })
}

pub fn aic(n_params: usize, loglik: f64) -> f64 {
    2.0 * n_params as f64 - 2.0 * loglik
}

pub fn bic(n_params: usize, n_observations: usize, loglik: f64) -> f64 {
    n_params as f64 * (n_observations as f64).ln() - 2.0 * loglik
}

/// Square roots of the diagonal of `(-H)^{-1}`; `None` where that diagonal
/// is not positive, and everywhere if `-H` is singular.
pub fn standard_errors(hessian: &DMatrix<f64>) -> Vec<Option<f64>> {
    let n = hessian.nrows();
    let neg = -hessian;
    let finite = neg.iter().all(|v| v.is_finite());
    let inv = if finite { neg.try_inverse() } else { None };
    match inv {
        None => vec![None; n],
        Some(inv) => (0..n)
            .map(|i| {
                let v = inv[(i, i)];
                (v.is_finite() && v > 0.0).then(|| v.sqrt())
            })
            .collect(),
    }
}
