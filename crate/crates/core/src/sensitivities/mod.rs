//! Analytic first and second derivatives of the filter log-likelihood.
//!
//! Both are forward-mode: the partials of the predicted and filtered state
//! and covariance are propagated through the filter alongside the values.

mod gradient;
mod hessian;
mod loadings;
mod params;
mod qnoise;

use nalgebra::DVector;

use crate::error::Result;
use crate::factor::{FactorKind, FactorParams};
use crate::term_structure::ModelSpec;

pub use gradient::{loglik_and_gradient, loglik_gradient};
pub use hessian::{loglik_hessian, HessianOutput};
pub use loadings::{cir_root, loading_gradient, loading_hessian, CirRoot, LoadingGradient, LoadingHessian};
pub use params::{ParamId, ParamVector, Symbol};
pub use qnoise::{qnoise_derivatives, Grad3, Hess3, NoiseDerivatives};

/// Per-parameter partials of the model blocks (`phi0`, `phi1`, the
/// measurement loadings, the initial state and the noise variance).
#[derive(Debug, Clone)]
pub(crate) struct First {
    pub dphi0: f64,
    pub dphi1: f64,
    /// `d h0 e` and `d h1[:, i]` over all maturities.
    pub dh0: DVector<f64>,
    pub dh1: DVector<f64>,
    pub dx0: f64,
    pub dp0: f64,
    pub dsigma2: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Second {
    pub d2phi0: f64,
    pub d2phi1: f64,
    pub d2h0: DVector<f64>,
    pub d2h1: DVector<f64>,
    pub d2p0: f64,
    pub d2sigma2: f64,
}

pub(crate) struct Blocks {
    /// `(factor, symbol)` of each parameter; `None` for `sigma_eps`.
    pub owner: Vec<Option<(usize, usize)>>,
    /// `local[j][k]`: symbol of parameter `k` if it belongs to factor `j`.
    pub local: Vec<Vec<Option<usize>>>,
    pub noise: Vec<NoiseDerivatives>,
    pub first: Vec<First>,
    /// Row-major `np x np`; `None` where the pair shares no block.
    pub second: Vec<Option<Second>>,
}

fn phi_derivatives(p: &FactorParams, dt: f64) -> ([f64; 3], Hess3, [f64; 3], Hess3) {
    let e = (-p.kappa * dt).exp();
    let one_minus_e = -(-p.kappa * dt).exp_m1();
    let d0 = [p.eta * dt * e, one_minus_e, 0.0];
    let h0 = [[-p.eta * dt * dt * e, dt * e, 0.0], [dt * e, 0.0, 0.0], [0.0; 3]];
    let d1 = [-dt * e, 0.0, 0.0];
    let h1 = [[dt * dt * e, 0.0, 0.0], [0.0; 3], [0.0; 3]];
    (d0, h0, d1, h1)
}

/// Partials of `x_0 = eta` and `P_0`, the stationary moments.
fn init_derivatives(kind: FactorKind, p: &FactorParams) -> ([f64; 3], [f64; 3], Hess3) {
    let FactorParams {
        kappa, eta, theta, ..
    } = *p;
    let dx = [0.0, 1.0, 0.0];
    let k2 = kappa * kappa;
    let th2 = theta * theta;
    match kind {
        FactorKind::Vasicek => (
            dx,
            [-th2 / (2.0 * k2), 0.0, theta / kappa],
            [
                [th2 / (k2 * kappa), 0.0, -theta / k2],
                [0.0; 3],
                [-theta / k2, 0.0, 1.0 / kappa],
            ],
        ),
        FactorKind::Cir => (
            dx,
            [-eta * th2 / (2.0 * k2), th2 / (2.0 * kappa), eta * theta / kappa],
            [
                [eta * th2 / (k2 * kappa), -th2 / (2.0 * k2), -eta * theta / k2],
                [-th2 / (2.0 * k2), 0.0, theta / kappa],
                [-eta * theta / k2, theta / kappa, eta / kappa],
            ],
        ),
    }
}

impl Blocks {
    pub fn new(spec: &ModelSpec, ids: &[ParamId], with_second: bool) -> Result<Self> {
        let np = ids.len();
        let n = spec.n_maturities();
        let d = spec.dim();
        let owner: Vec<_> = ids.iter().map(ParamId::factor).collect();
        let local = (0..d)
            .map(|j| {
                owner
                    .iter()
                    .map(|o| o.and_then(|(f, s)| (f == j).then_some(s)))
                    .collect()
            })
            .collect();
        let noise = spec
            .factors
            .iter()
            .map(|f| NoiseDerivatives::new(f.kind, &f.params, spec.dt))
            .collect();

        // Loading partials per factor and maturity.
        let mut lg = Vec::with_capacity(d);
        for f in &spec.factors {
            let per_t = spec
                .maturities
                .iter()
                .map(|&t| loadings::loading_derivatives(f.kind, &f.params, t))
                .collect::<Result<Vec<_>>>()?;
            lg.push(per_t);
        }
        let sigma = spec.sigma_eps;
        let mut first = Vec::with_capacity(np);
        for o in &owner {
            first.push(match *o {
                None => First {
                    dphi0: 0.0,
                    dphi1: 0.0,
                    dh0: DVector::zeros(n),
                    dh1: DVector::zeros(n),
                    dx0: 0.0,
                    dp0: 0.0,
                    dsigma2: 2.0 * sigma,
                },
                Some((i, s)) => {
                    let f = &spec.factors[i];
                    let (d0, _, d1, _) = phi_derivatives(&f.params, spec.dt);
                    let (dx0, dp0, _) = init_derivatives(f.kind, &f.params);
                    let mat = &spec.maturities;
                    First {
                        dphi0: d0[s],
                        dphi1: d1[s],
                        dh0: DVector::from_fn(n, |j, _| -lg[i][j].1.a[s] / mat[j]),
                        dh1: DVector::from_fn(n, |j, _| -lg[i][j].1.b[s] / mat[j]),
                        dx0: dx0[s],
                        dp0: dp0[s],
                        dsigma2: 0.0,
                    }
                }
            });
        }
        let mut second = Vec::new();
        if with_second {
            second.reserve(np * np);
            for ok in &owner {
                for ol in &owner {
                    second.push(match (*ok, *ol) {
                        (None, None) => Some(Second {
                            d2phi0: 0.0,
                            d2phi1: 0.0,
                            d2h0: DVector::zeros(n),
                            d2h1: DVector::zeros(n),
                            d2p0: 0.0,
                            d2sigma2: 2.0,
                        }),
                        (Some((i, s)), Some((j, u))) if i == j => {
                            let f = &spec.factors[i];
                            let (_, h0, _, h1) = phi_derivatives(&f.params, spec.dt);
                            let (_, _, hp) = init_derivatives(f.kind, &f.params);
                            let mat = &spec.maturities;
                            Some(Second {
                                d2phi0: h0[s][u],
                                d2phi1: h1[s][u],
                                d2h0: DVector::from_fn(n, |m, _| -lg[i][m].2.a[s][u] / mat[m]),
                                d2h1: DVector::from_fn(n, |m, _| -lg[i][m].2.b[s][u] / mat[m]),
                                d2p0: hp[s][u],
                                d2sigma2: 0.0,
                            })
                        }
                        _ => None,
                    });
                }
            }
        }
        Ok(Blocks {
            owner,
            local,
            noise,
            first,
            second,
        })
    }
}
