//! Multi-factor yields and the linear state-space matrices of the model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{self, Factor};

/// One trading day as a year fraction.
pub const DEFAULT_DT: f64 = 1.0 / 252.0;

/// An ordered set of independent factors observed through zero-coupon
/// yields at fixed maturities with i.i.d. Gaussian measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub factors: Vec<Factor>,
    pub sigma_eps: f64,
    pub dt: f64,
    pub maturities: Vec<f64>,
}

impl ModelSpec {
    pub fn new(factors: Vec<Factor>, sigma_eps: f64, dt: f64, maturities: Vec<f64>) -> Result<Self> {
        let spec = ModelSpec {
            factors,
            sigma_eps,
            dt,
            maturities,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::invalid("model needs at least one factor"));
        }
        for f in &self.factors {
            f.params.validate(f.kind)?;
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps > 0.0) {
            return Err(Error::invalid(format!(
                "measurement noise must be positive, got {}",
                self.sigma_eps
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        validate_maturities(&self.maturities)
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    /// Number of maturities `n`.
    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }
}

pub(crate) fn validate_maturities(maturities: &[f64]) -> Result<()> {
    if maturities.is_empty() {
        return Err(Error::invalid("at least one maturity is required"));
    }
    for (j, &m) in maturities.iter().enumerate() {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid(format!("maturity {j} must be positive, got {m}")));
        }
        if j > 0 && m <= maturities[j - 1] {
            return Err(Error::invalid(format!(
                "maturities must be strictly increasing (column {j}: {m})"
            )));
        }
    }
    Ok(())
}

/// `x_t = phi0 + phi1 x_{t-1} + v`, `z_t = h0 e + h1 x_t + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceMatrices {
    pub phi0: DVector<f64>,
    pub phi1: DMatrix<f64>,
    pub h0: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl StateSpaceMatrices {
    /// `h0 e`, the intercept of the measurement equation.
    pub fn intercept(&self) -> DVector<f64> {
        DVector::from_iterator(self.h0.nrows(), self.h0.row_iter().map(|r| r.sum()))
    }
}

pub fn build_state_space(spec: &ModelSpec) -> Result<StateSpaceMatrices> {
    spec.validate()?;
    let d = spec.dim();
    let n = spec.n_maturities();
    let mut phi0 = DVector::zeros(d);
    let mut phi1 = DMatrix::zeros(d, d);
    let mut h0 = DMatrix::zeros(n, d);
    let mut h1 = DMatrix::zeros(n, d);
    for (i, f) in spec.factors.iter().enumerate() {
        let x = f.params.kappa * spec.dt;
        phi0[i] = -(-x).exp_m1() * f.params.eta;
        phi1[(i, i)] = (-x).exp();
        for (j, &t) in spec.maturities.iter().enumerate() {
            let l = factor::loadings(f.kind, t, &f.params)?;
            h0[(j, i)] = -l.a / t;
            h1[(j, i)] = -l.b / t;
        }
    }
    let sigma = DMatrix::from_diagonal_element(n, n, spec.sigma_eps * spec.sigma_eps);
    Ok(StateSpaceMatrices {
        phi0,
        phi1,
        h0,
        h1,
        sigma,
    })
}

pub fn model_yields(spec: &ModelSpec, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::invalid(format!(
            "state has {} entries, model has {} factors",
            x.len(),
            spec.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("state is not finite"));
    }
    let ss = build_state_space(spec)?;
    Ok(ss.intercept() + &ss.h1 * x)
}

/// Diagonal transition covariance `Q_t`; CIR entries depend on `max(x_prev, 0)`.
pub fn process_noise(spec: &ModelSpec, x_prev: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x_prev.len() != spec.dim() {
        return Err(Error::invalid("previous state has the wrong dimension"));
    }
    let diag = DVector::from_iterator(
        spec.dim(),
        spec.factors.iter().zip(x_prev.iter()).map(|(f, &r)| {
            let (level, state) = factor::transition_variance_parts(f.kind, &f.params, spec.dt);
            level + r.max(0.0) * state
        }),
    );
    Ok(DMatrix::from_diagonal(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{conditional_moments, loadings, FactorKind, FactorParams};

    fn two_factor() -> ModelSpec {
        ModelSpec::new(
            vec![
                Factor::vasicek(FactorParams::new(0.2433, 0.0611, 0.0124)),
                Factor::cir(FactorParams::new(0.2110, 0.0657, 0.0995)),
            ],
            0.001,
            DEFAULT_DT,
            vec![0.25, 1.0, 5.0, 10.0, 30.0],
        )
        .unwrap()
    }

    #[test]
    fn spec_validation() {
        let f = vec![Factor::vasicek(FactorParams::new(0.5, 0.02, 0.01))];
        assert!(ModelSpec::new(vec![], 0.01, DEFAULT_DT, vec![1.0]).is_err());
        assert!(ModelSpec::new(f.clone(), 0.0, DEFAULT_DT, vec![1.0]).is_err());
        assert!(ModelSpec::new(f.clone(), 0.01, DEFAULT_DT, vec![1.0, 1.0]).is_err());
        assert!(ModelSpec::new(f.clone(), 0.01, DEFAULT_DT, vec![]).is_err());
        assert!(ModelSpec::new(f, 0.01, DEFAULT_DT, vec![0.5, 2.0]).is_ok());
    }

    #[test]
    fn yields_affine_in_state() {
        let spec = two_factor();
        let x1 = DVector::from_vec(vec![0.01, 0.03]);
        let x2 = DVector::from_vec(vec![-0.02, 0.005]);
        let y0 = model_yields(&spec, &DVector::zeros(2)).unwrap();
        let lhs = model_yields(&spec, &x1).unwrap() + model_yields(&spec, &x2).unwrap() - &y0;
        let rhs = model_yields(&spec, &(&x1 + &x2)).unwrap();
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn zero_state_yields_are_intercepts() {
        let spec = two_factor();
        let y = model_yields(&spec, &DVector::zeros(2)).unwrap();
        for (j, &t) in spec.maturities.iter().enumerate() {
            let expected: f64 = spec
                .factors
                .iter()
                .map(|f| -loadings(f.kind, t, &f.params).unwrap().a / t)
                .sum();
            assert!((y[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn multi_factor_log_price_is_sum() {
        let spec = two_factor();
        let x = DVector::from_vec(vec![0.012, 0.021]);
        let y = model_yields(&spec, &x).unwrap();
        for (j, &t) in spec.maturities.iter().enumerate() {
            let log_price: f64 = spec
                .factors
                .iter()
                .zip(x.iter())
                .map(|(f, &r)| {
                    let l = loadings(f.kind, t, &f.params).unwrap();
                    l.a + l.b * r
                })
                .sum();
            assert!((y[j] + log_price / t).abs() < 1e-15);
        }
    }

    #[test]
    fn measurement_rows_reprice_bonds() {
        let spec = two_factor();
        let ss = build_state_space(&spec).unwrap();
        let r = 0.017;
        for (i, f) in spec.factors.iter().enumerate() {
            for (j, &t) in spec.maturities.iter().enumerate() {
                let price = (t * (-ss.h0[(j, i)] - ss.h1[(j, i)] * r)).exp();
                let direct = loadings(f.kind, t, &f.params).unwrap().price(r);
                assert!((price - direct).abs() <= 1e-12 * direct);
                assert!(ss.h1[(j, i)] > 0.0);
            }
            assert!(ss.phi1[(i, i)] > 0.0 && ss.phi1[(i, i)] < 1.0);
        }
    }

    #[test]
    fn transition_limits() {
        let mut spec = two_factor();
        spec.dt = 1e4;
        let ss = build_state_space(&spec).unwrap();
        for (i, f) in spec.factors.iter().enumerate() {
            assert!(ss.phi1[(i, i)] < 1e-100);
            assert!((ss.phi0[i] - f.params.eta).abs() < 1e-15);
        }
        let pinned = ModelSpec::new(
            vec![
                Factor::vasicek(FactorParams::zero_mean(0.3, 0.01)),
                Factor::vasicek(FactorParams::zero_mean(0.9, 0.02)),
            ],
            0.001,
            DEFAULT_DT,
            vec![1.0],
        )
        .unwrap();
        assert_eq!(build_state_space(&pinned).unwrap().phi0.amax(), 0.0);
    }

    #[test]
    fn process_noise_matches_conditional_variance() {
        let spec = two_factor();
        for x in [vec![0.02, 0.03], vec![-0.01, -0.02], vec![0.0, 0.0]] {
            let xv = DVector::from_vec(x.clone());
            let q = process_noise(&spec, &xv).unwrap();
            for (i, f) in spec.factors.iter().enumerate() {
                let m = conditional_moments(&f.params, f.kind, x[i], spec.dt).unwrap();
                assert!((q[(i, i)] - m.variance).abs() <= 1e-15 * m.variance);
            }
            assert_eq!(q[(0, 1)], 0.0);
        }
        let q_a = process_noise(&spec, &DVector::from_vec(vec![0.5, 0.03])).unwrap();
        let q_b = process_noise(&spec, &DVector::from_vec(vec![-0.5, 0.03])).unwrap();
        assert_eq!(q_a[(0, 0)], q_b[(0, 0)]);
        let p = spec.factors[1].params;
        let q0 = process_noise(&spec, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
        let e = (-p.kappa * spec.dt).exp();
        let expected = p.theta * p.theta * p.eta * (1.0 - e).powi(2) / (2.0 * p.kappa);
        assert!((q0[(1, 1)] - expected).abs() < 1e-13 * expected);
        assert_eq!(spec.factors[1].kind, FactorKind::Cir);
    }
}
