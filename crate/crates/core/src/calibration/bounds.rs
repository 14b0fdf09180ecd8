use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorKind;
use crate::sensitivities::{ParamId, ParamVector};
use crate::term_structure::ModelSpec;

pub const SIGMA_EPS_BOUNDS: (f64, f64) = (1e-4, 0.5);

/// Default `(kappa, eta, theta)` box of a factor.
pub fn default_factor_bounds(kind: FactorKind) -> ([f64; 3], [f64; 3]) {
    match kind {
        FactorKind::Cir => ([1e-4; 3], [5.0, 0.1, 0.5]),
        FactorKind::Vasicek => ([1e-4; 3], [5.0, 0.1, 0.1]),
    }
}

/// Per-parameter box in the order of [`ParamVector::layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("lower and upper bounds differ in length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(format!("bound {i} must satisfy lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn default_for(spec: &ModelSpec) -> Self {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for id in ParamVector::layout(spec) {
            let (l, u) = match id {
                ParamId::Factor { factor, symbol } => {
                    let (l, u) = default_factor_bounds(spec.factors[factor].kind);
                    (l[symbol.local()], u[symbol.local()])
                }
                ParamId::SigmaEps => SIGMA_EPS_BOUNDS,
            };
            lower.push(l);
            upper.push(u);
        }
        Bounds { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn set(&mut self, index: usize, lower: f64, upper: f64) -> Result<()> {
        if index >= self.len() {
            return Err(Error::invalid(format!("bound index {index} out of range")));
        }
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::invalid(format!("bound must satisfy lower < upper, got [{lower}, {upper}]")));
        }
        self.lower[index] = lower;
        self.upper[index] = upper;
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len() && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.len()).map(|i| rng.random_range(self.lower[i]..self.upper[i])).collect()
    }

    /// Indices of entries within `tol` of a bound.
    pub fn hits(&self, x: &[f64], tol: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| (x[i] - self.lower[i]).abs() <= tol || (x[i] - self.upper[i]).abs() <= tol)
            .collect()
    }

    pub(crate) fn check(&self, theta: &ParamVector) -> Result<()> {
        if self.len() != theta.len() {
            return Err(Error::invalid(format!(
                "{} bounds for {} parameters",
                self.len(),
                theta.len()
            )));
        }
        if self.lower.iter().any(|l| *l <= 0.0) {
            return Err(Error::invalid("lower bounds must be positive"));
        }
        Ok(())
    }
}
