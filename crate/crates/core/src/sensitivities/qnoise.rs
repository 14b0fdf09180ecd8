//! Derivatives of the diagonal transition covariance `Q_t`.
//!
//! Each factor contributes `Q = q_level + r q_state` with `r = max(x_prev, 0)`
//! (`q_state = 0` for Vasicek). Local partials are with respect to the
//! factor's own `(kappa, eta, theta)`; the chain through `x_prev` carries the
//! dependence on every other parameter.

use nalgebra::DMatrix;

use crate::expfn;
use crate::factor::{FactorKind, FactorParams};

pub type Grad3 = [f64; 3];
pub type Hess3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDerivatives {
    pub level: f64,
    pub d_level: Grad3,
    pub d2_level: Hess3,
    pub state: f64,
    pub d_state: Grad3,
    pub d2_state: Hess3,
}

fn sym(kk: f64, ke: f64, kt: f64, ee: f64, et: f64, tt: f64) -> Hess3 {
    [[kk, ke, kt], [ke, ee, et], [kt, et, tt]]
}

impl NoiseDerivatives {
    pub fn new(kind: FactorKind, p: &FactorParams, dt: f64) -> Self {
        let FactorParams {
            kappa, eta, theta, ..
        } = *p;
        let th2 = theta * theta;
        let x = kappa * dt;
        match kind {
            FactorKind::Vasicek => {
                // q_v = theta^2 dt phi(2 kappa dt)
                let f = expfn::phi1(2.0 * x);
                NoiseDerivatives {
                    level: th2 * dt * f.v,
                    d_level: [2.0 * th2 * dt * dt * f.d1, 0.0, 2.0 * theta * dt * f.v],
                    d2_level: sym(
                        4.0 * th2 * dt.powi(3) * f.d2,
                        0.0,
                        4.0 * theta * dt * dt * f.d1,
                        0.0,
                        0.0,
                        2.0 * dt * f.v,
                    ),
                    state: 0.0,
                    d_state: [0.0; 3],
                    d2_state: [[0.0; 3]; 3],
                }
            }
            FactorKind::Cir => {
                let f = expfn::phi1(x);
                let dt2 = dt * dt;
                // q_c1 = theta^2 eta dt^2 G / 2, G(kappa) = kappa phi(kappa dt)^2
                let g = kappa * f.v * f.v;
                let g1 = f.v * f.v + 2.0 * x * f.v * f.d1;
                let g2 = 4.0 * dt * f.v * f.d1 + 2.0 * kappa * dt2 * (f.d1 * f.d1 + f.v * f.d2);
                // q_c2 = theta^2 dt F, F(kappa) = e^{-kappa dt} phi(kappa dt)
                let e = (-x).exp();
                let h = e * f.v;
                let h1 = dt * e * (f.d1 - f.v);
                let h2 = dt2 * e * (f.v - 2.0 * f.d1 + f.d2);
                NoiseDerivatives {
                    level: 0.5 * th2 * eta * dt2 * g,
                    d_level: [0.5 * th2 * eta * dt2 * g1, 0.5 * th2 * dt2 * g, theta * eta * dt2 * g],
                    d2_level: sym(
                        0.5 * th2 * eta * dt2 * g2,
                        0.5 * th2 * dt2 * g1,
                        theta * eta * dt2 * g1,
                        0.0,
                        theta * dt2 * g,
                        eta * dt2 * g,
                    ),
                    state: th2 * dt * h,
                    d_state: [th2 * dt * h1, 0.0, 2.0 * theta * dt * h],
                    d2_state: sym(th2 * dt * h2, 0.0, 2.0 * theta * dt * h1, 0.0, 0.0, 2.0 * dt * h),
                }
            }
        }
    }

    pub fn value(&self, x_prev: f64) -> f64 {
        self.level + x_prev.max(0.0) * self.state
    }

    /// `dQ/dxi_k` given `d x_prev / dxi_k`; `local[k]` names the symbol of
    /// parameter `k` when it belongs to this factor.
    pub fn first(&self, x_prev: f64, dx_prev: f64, local: Option<usize>) -> f64 {
        let r = x_prev.max(0.0);
        let dr = if x_prev > 0.0 { dx_prev } else { 0.0 };
        let mut out = dr * self.state;
        if let Some(s) = local {
            out += self.d_level[s] + r * self.d_state[s];
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn second(
        &self,
        x_prev: f64,
        dx_k: f64,
        dx_l: f64,
        d2x_kl: f64,
        local_k: Option<usize>,
        local_l: Option<usize>,
    ) -> f64 {
        let active = x_prev > 0.0;
        let r = x_prev.max(0.0);
        let (dr_k, dr_l, d2r) = if active { (dx_k, dx_l, d2x_kl) } else { (0.0, 0.0, 0.0) };
        let mut out = d2r * self.state;
        if let Some(l) = local_l {
            out += dr_k * self.d_state[l];
        }
        if let Some(k) = local_k {
            out += dr_l * self.d_state[k];
        }
        if let (Some(k), Some(l)) = (local_k, local_l) {
            out += self.d2_level[k][l] + r * self.d2_state[k][l];
        }
        out
    }
}

/// First and second partials of one factor's `Q_t` entry with respect to the
/// full parameter vector. `local[k]` is the factor-local symbol index of
/// parameter `k` (or `None`), `dx_prev[k]` and `d2x_prev[(k, l)]` are the
/// sensitivities of the previous filtered state of this factor.
pub fn qnoise_derivatives(
    kind: FactorKind,
    p: &FactorParams,
    dt: f64,
    x_prev: f64,
    dx_prev: &[f64],
    d2x_prev: &DMatrix<f64>,
    local: &[Option<usize>],
) -> (Vec<f64>, DMatrix<f64>) {
    let nd = NoiseDerivatives::new(kind, p, dt);
    let np = local.len();
    let first = (0..np).map(|k| nd.first(x_prev, dx_prev[k], local[k])).collect();
    let second = DMatrix::from_fn(np, np, |k, l| {
        nd.second(x_prev, dx_prev[k], dx_prev[l], d2x_prev[(k, l)], local[k], local[l])
    });
    (first, second)
}
