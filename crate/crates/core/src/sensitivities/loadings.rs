//! Partial derivatives of the bond loadings `A(t)`, `B(t)` with respect to a
//! factor's `(kappa, eta, theta)`, indexed by [`Symbol::local`](super::Symbol::local).

use crate::error::{Error, Result};
use crate::expfn;
use crate::factor::{self, FactorKind, FactorParams, Loadings};

use super::qnoise::{Grad3, Hess3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingGradient {
    pub a: Grad3,
    pub b: Grad3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadingHessian {
    pub a: Hess3,
    pub b: Hess3,
}

/// `b = sqrt(kappa^2 + 2 theta^2)` of the CIR loadings with its gradient and
/// Hessian in `(kappa, eta, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirRoot {
    pub value: f64,
    pub grad: Grad3,
    pub hess: Hess3,
}

pub fn cir_root(kappa: f64, theta: f64) -> CirRoot {
    let b = (kappa * kappa + 2.0 * theta * theta).sqrt();
    let b3 = b * b * b;
    let kk = 2.0 * theta * theta / b3;
    let kt = -2.0 * kappa * theta / b3;
    let tt = 2.0 * kappa * kappa / b3;
    CirRoot {
        value: b,
        grad: [kappa / b, 0.0, 2.0 * theta / b],
        hess: [[kk, 0.0, kt], [0.0, 0.0, 0.0], [kt, 0.0, tt]],
    }
}

pub fn loading_gradient(kind: FactorKind, p: &FactorParams, t: f64) -> Result<LoadingGradient> {
    loading_derivatives(kind, p, t).map(|(_, g, _)| g)
}

pub fn loading_hessian(kind: FactorKind, p: &FactorParams, t: f64) -> Result<LoadingHessian> {
    loading_derivatives(kind, p, t).map(|(_, _, h)| h)
}

pub(crate) fn loading_derivatives(
    kind: FactorKind,
    p: &FactorParams,
    t: f64,
) -> Result<(Loadings, LoadingGradient, LoadingHessian)> {
    let l = factor::loadings(kind, t, p)?;
    let (g, h) = match kind {
        FactorKind::Vasicek => vasicek(p, t),
        FactorKind::Cir => cir(p, t)?,
    };
    Ok((l, g, h))
}

fn vasicek(p: &FactorParams, t: f64) -> (LoadingGradient, LoadingHessian) {
    let FactorParams {
        kappa, eta, theta, ..
    } = *p;
    let x = kappa * t;
    let phi = expfn::phi1(x);
    let lvl = expfn::one_minus_phi1(x);
    let cvx = expfn::convexity(x);
    let (t2, t3) = (t * t, t * t * t);
    let th2 = theta * theta;

    let a_k = -eta * t2 * lvl.d1 + th2 * t3 * t * cvx.d1;
    let a_e = -t * lvl.v;
    let a_t = 2.0 * theta * t3 * cvx.v;
    let a_kk = -eta * t3 * lvl.d2 + th2 * t3 * t2 * cvx.d2;
    let a_ke = -t2 * lvl.d1;
    let a_kt = 2.0 * theta * t3 * t * cvx.d1;
    let a_tt = 2.0 * t3 * cvx.v;

    (
        LoadingGradient {
            a: [a_k, a_e, a_t],
            b: [-t2 * phi.d1, 0.0, 0.0],
        },
        LoadingHessian {
            a: [[a_kk, a_ke, a_kt], [a_ke, 0.0, 0.0], [a_kt, 0.0, a_tt]],
            b: [[-t3 * phi.d2, 0.0, 0.0], [0.0; 3], [0.0; 3]],
        },
    )
}

/// Chain rule through `b`, `E = e^{bt} - 1`, `s = kappa + b`, `D = 2b + sE`,
/// `f = log(2b) + s t / 2 - log D`, `A = c f` with `c = 2 kappa eta / theta^2`,
/// and `B = -2E / D`.
fn cir(p: &FactorParams, t: f64) -> Result<(LoadingGradient, LoadingHessian)> {
    let FactorParams {
        kappa, eta, theta, ..
    } = *p;
    if theta <= 0.0 {
        return Err(Error::invalid("CIR loadings need theta > 0"));
    }
    let root = cir_root(kappa, theta);
    let b = root.value;
    let (bg, bh) = (root.grad, root.hess);
    let e = (b * t).exp();
    let big_e = (b * t).exp_m1();
    let s = kappa + b;
    let d = 2.0 * b + s * big_e;
    let f = factor::cir_log_factor(kappa, theta, t);
    let th2 = theta * theta;
    let c = 2.0 * kappa * eta / th2;
    let bb = -2.0 * big_e / d;

    let unit_k = [1.0, 0.0, 0.0];
    let mut eg = [0.0; 3];
    let mut sg = [0.0; 3];
    let mut dg = [0.0; 3];
    let mut fg = [0.0; 3];
    for i in 0..3 {
        eg[i] = t * e * bg[i];
        sg[i] = unit_k[i] + bg[i];
        dg[i] = 2.0 * bg[i] + sg[i] * big_e + s * eg[i];
        fg[i] = bg[i] / b + 0.5 * sg[i] * t - dg[i] / d;
    }
    let cg = [2.0 * eta / th2, 2.0 * kappa / th2, -4.0 * kappa * eta / (th2 * theta)];
    let ch = {
        let ke = 2.0 / th2;
        let kt = -4.0 * eta / (th2 * theta);
        let et = -4.0 * kappa / (th2 * theta);
        let tt = 12.0 * kappa * eta / (th2 * th2);
        [[0.0, ke, kt], [ke, 0.0, et], [kt, et, tt]]
    };

    let mut ag = [0.0; 3];
    let mut bgr = [0.0; 3];
    for i in 0..3 {
        ag[i] = cg[i] * f + c * fg[i];
        bgr[i] = (-2.0 * eg[i] - bb * dg[i]) / d;
    }
    let mut ah = [[0.0; 3]; 3];
    let mut bhs = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let e_ij = t * t * e * bg[i] * bg[j] + t * e * bh[i][j];
            let s_ij = bh[i][j];
            let d_ij = 2.0 * bh[i][j] + s_ij * big_e + sg[i] * eg[j] + sg[j] * eg[i] + s * e_ij;
            let f_ij = bh[i][j] / b - bg[i] * bg[j] / (b * b) + 0.5 * s_ij * t - d_ij / d
                + dg[i] * dg[j] / (d * d);
            ah[i][j] = ch[i][j] * f + cg[i] * fg[j] + cg[j] * fg[i] + c * f_ij;
            bhs[i][j] = (-2.0 * e_ij - bgr[i] * dg[j] - bgr[j] * dg[i] - bb * d_ij) / d;
        }
    }
    let finite = ag.iter().chain(&bgr).all(|v| v.is_finite())
        && ah.iter().chain(&bhs).flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::invalid(format!("CIR loading derivatives overflow at t = {t}")));
    }
    Ok((LoadingGradient { a: ag, b: bgr }, LoadingHessian { a: ah, b: bhs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(p: &FactorParams, s: usize, v: f64) -> FactorParams {
        let mut q = *p;
        match s {
            0 => q.kappa = v,
            1 => q.eta = v,
            _ => q.theta = v,
        }
        q
    }

    fn get(p: &FactorParams, s: usize) -> f64 {
        [p.kappa, p.eta, p.theta][s]
    }

    fn fd5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn root_cross_partial() {
        let r = cir_root(1.0, 1.0);
        assert!((r.hess[0][2] + 2.0 / 3f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(r.hess[0][2], r.hess[2][0]);
    }

    #[test]
    fn printed_zero_partials() {
        let p = FactorParams::new(0.4, 0.03, 0.05);
        for t in [0.5, 3.0, 20.0] {
            let g = loading_gradient(FactorKind::Vasicek, &p, t).unwrap();
            assert_eq!(g.b[1], 0.0);
            assert_eq!(g.b[2], 0.0);
            let h = loading_hessian(FactorKind::Vasicek, &p, t).unwrap();
            assert_eq!(h.a[1][1], 0.0);
            assert_eq!(h.a[1][2], 0.0);
            assert_eq!(h.a[2][1], 0.0);
        }
    }

    #[test]
    fn vasicek_eta_partial_is_minus_t_minus_slope() {
        let p = FactorParams::new(0.7, 0.03, 0.05);
        for t in [0.25, 2.0, 10.0] {
            let g = loading_gradient(FactorKind::Vasicek, &p, t).unwrap();
            let b = factor::vasicek_loadings(t, &p).unwrap().b;
            assert!((g.a[1] - (-t - b)).abs() < 1e-14 * t);
        }
    }

    #[test]
    fn cir_eta_partial_is_a_over_eta() {
        let p = FactorParams::new(0.21, 0.0657, 0.0995);
        for t in [0.25, 2.0, 10.0, 30.0] {
            let g = loading_gradient(FactorKind::Cir, &p, t).unwrap();
            let a = factor::cir_loadings(t, &p).unwrap().a;
            assert!((g.a[1] - a / p.eta).abs() < 1e-13 * (a / p.eta).abs());
        }
    }

    #[test]
    fn first_and_second_partials_match_finite_differences() {
        let grid = [
            FactorParams::new(0.2433, 0.0611, 0.0124),
            FactorParams::new(0.211, 0.0657, 0.0995),
            FactorParams::new(2.7, 0.02, 0.35),
            FactorParams::new(0.01, 0.09, 0.2),
        ];
        for kind in [FactorKind::Vasicek, FactorKind::Cir] {
            for p in &grid {
                for t in [0.25, 1.0, 5.0, 10.0, 30.0] {
                    let (_, g, h) = loading_derivatives(kind, p, t).unwrap();
                    for s in 0..3 {
                        let x = get(p, s);
                        let step = 1e-5 * x.abs().max(1.0);
                        let fa = fd5(|v| factor::loadings(kind, t, &with(p, s, v)).unwrap().a, x, step);
                        let fb = fd5(|v| factor::loadings(kind, t, &with(p, s, v)).unwrap().b, x, step);
                        let scale_a = g.a.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
                        let scale_b = g.b.iter().fold(1e-3, |m: f64, v| m.max(v.abs()));
                        assert!((g.a[s] - fa).abs() < 1e-7 * scale_a, "{kind:?} {p:?} t={t} dA/d{s}: {} vs {fa}", g.a[s]);
                        assert!((g.b[s] - fb).abs() < 1e-7 * scale_b, "{kind:?} {p:?} t={t} dB/d{s}: {} vs {fb}", g.b[s]);
                        for u in 0..3 {
                            let ha = fd5(|v| loading_gradient(kind, &with(p, s, v), t).unwrap().a[u], x, step);
                            let hb = fd5(|v| loading_gradient(kind, &with(p, s, v), t).unwrap().b[u], x, step);
                            let sa = h.a.iter().flatten().fold(1e-3, |m: f64, v| m.max(v.abs()));
                            let sb = h.b.iter().flatten().fold(1e-3, |m: f64, v| m.max(v.abs()));
                            assert!((h.a[s][u] - ha).abs() < 1e-6 * sa, "{kind:?} {p:?} t={t} d2A/d{s}d{u}: {} vs {ha}", h.a[s][u]);
                            assert!((h.b[s][u] - hb).abs() < 1e-6 * sb, "{kind:?} {p:?} t={t} d2B/d{s}d{u}: {} vs {hb}", h.b[s][u]);
                        }
                    }
                }
            }
        }
    }
}
