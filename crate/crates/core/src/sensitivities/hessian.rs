use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{self, day_observation, innovation_factor, log_det, select_entries, select_rows, YieldPanel};
use crate::term_structure::{build_state_space, ModelSpec};

use super::{Blocks, ParamVector};

#[derive(Debug, Clone, PartialEq)]
pub struct HessianOutput {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    /// `(H + H') / 2`.
    pub hessian: DMatrix<f64>,
    /// `max |H - H'|` before symmetrization.
    pub asymmetry: f64,
}

type M = DMatrix<f64>;

fn prod3(a: (&M, &M), b: (&M, &M), c: (&M, &M)) -> M {
    a.1 * b.0 * c.0 + a.0 * b.1 * c.0 + a.0 * b.0 * c.1
}

/// Second partial of `a b c`; each argument is `[value, d_k, d_l, d_kl]`.
fn prod3_second(a: [&M; 4], b: [&M; 4], c: [&M; 4]) -> M {
    let ab = |i: usize, j: usize| a[i] * b[j];
    &ab(3, 0) * c[0]
        + &ab(1, 2) * c[0]
        + &ab(1, 0) * c[2]
        + &ab(2, 1) * c[0]
        + &ab(0, 3) * c[0]
        + &ab(0, 1) * c[2]
        + &ab(2, 0) * c[1]
        + &ab(0, 2) * c[1]
        + &ab(0, 0) * c[3]
}

/// Observed-day slice of the measurement intercept and loadings.
struct Measurement {
    c: DVector<f64>,
    h: M,
}

/// Log-likelihood, gradient and Hessian at `theta` from second-order
/// sensitivity propagation through the filter.
pub fn loglik_hessian(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> Result<HessianOutput> {
    let spec = theta.apply(spec)?;
    run(&spec, panel, theta)
}

fn run(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> Result<HessianOutput> {
    panel.validate()?;
    panel.check_against(spec)?;
    let ss = build_state_space(spec)?;
    let intercept = ss.intercept();
    let d = spec.dim();
    let n = spec.n_maturities();
    let np = theta.len();
    let sigma2 = spec.sigma_eps * spec.sigma_eps;
    let bl = Blocks::new(spec, &theta.ids, true)?;
    let pair = |k: usize, l: usize| k * np + l;

    // Model-block partials as dense arrays.
    let zero_dd = M::zeros(d, d);
    let zero_nd = M::zeros(n, d);
    let mut dphi = vec![zero_dd.clone(); np];
    let mut dphi0 = vec![DVector::zeros(d); np];
    let mut dh = vec![zero_nd.clone(); np];
    let mut dc = vec![DVector::zeros(n); np];
    let mut ds2 = vec![0.0; np];
    for k in 0..np {
        let f = &bl.first[k];
        ds2[k] = f.dsigma2;
        if let Some((i, _)) = bl.owner[k] {
            dphi[k][(i, i)] = f.dphi1;
            dphi0[k][i] = f.dphi0;
            dh[k].set_column(i, &f.dh1);
            dc[k] = f.dh0.clone();
        }
    }
    let mut d2phi = vec![zero_dd.clone(); np * np];
    let mut d2phi0 = vec![DVector::zeros(d); np * np];
    let mut d2h = vec![zero_nd.clone(); np * np];
    let mut d2c = vec![DVector::zeros(n); np * np];
    let mut d2s2 = vec![0.0; np * np];
    for k in 0..np {
        for l in 0..np {
            let kl = pair(k, l);
            if let Some(sec) = &bl.second[kl] {
                d2s2[kl] = sec.d2sigma2;
                if let Some((i, _)) = bl.owner[k] {
                    d2phi[kl][(i, i)] = sec.d2phi1;
                    d2phi0[kl][i] = sec.d2phi0;
                    d2h[kl].set_column(i, &sec.d2h1);
                    d2c[kl] = sec.d2h0.clone();
                }
            }
        }
    }

    let init = kalman::initial_state(spec)?;
    let (mut x, mut p) = (init.x, init.p);
    let mut dx = vec![DVector::zeros(d); np];
    let mut dp = vec![zero_dd.clone(); np];
    let mut d2x = vec![DVector::zeros(d); np * np];
    let mut d2p = vec![zero_dd.clone(); np * np];
    for k in 0..np {
        if let Some((i, _)) = bl.owner[k] {
            dx[k][i] = bl.first[k].dx0;
            dp[k][(i, i)] = bl.first[k].dp0;
        }
        for l in 0..np {
            if let (Some(sec), Some((i, _))) = (&bl.second[pair(k, l)], bl.owner[k]) {
                d2p[pair(k, l)][(i, i)] = sec.d2p0;
            }
        }
    }

    let phi = ss.phi1.clone();
    let mut loglik = 0.0;
    let mut grad = DVector::<f64>::zeros(np);
    let mut hess = M::zeros(np, np);

    for t in 0..panel.n_days() {
        // Prediction.
        let xp = &ss.phi0 + &phi * &x;
        let q = M::from_diagonal(&DVector::from_fn(d, |j, _| bl.noise[j].value(x[j])));
        let pp = &phi * &p * &phi + &q;
        let mut dxp = Vec::with_capacity(np);
        let mut dpp = Vec::with_capacity(np);
        for k in 0..np {
            dxp.push(&dphi0[k] + &dphi[k] * &x + &phi * &dx[k]);
            let dq = M::from_diagonal(&DVector::from_fn(d, |j, _| {
                bl.noise[j].first(x[j], dx[k][j], bl.local[j][k])
            }));
            dpp.push(prod3((&phi, &dphi[k]), (&p, &dp[k]), (&phi, &dphi[k])) + dq);
        }
        let mut d2xp = Vec::with_capacity(np * np);
        let mut d2pp = Vec::with_capacity(np * np);
        for k in 0..np {
            for l in 0..np {
                let kl = pair(k, l);
                d2xp.push(
                    &d2phi0[kl] + &d2phi[kl] * &x + &dphi[k] * &dx[l] + &dphi[l] * &dx[k] + &phi * &d2x[kl],
                );
                let d2q = M::from_diagonal(&DVector::from_fn(d, |j, _| {
                    bl.noise[j].second(x[j], dx[k][j], dx[l][j], d2x[kl][j], bl.local[j][k], bl.local[j][l])
                }));
                let f = [&phi, &dphi[k], &dphi[l], &d2phi[kl]];
                let g = [&p, &dp[k], &dp[l], &d2p[kl]];
                d2pp.push(prod3_second(f, g, f) + d2q);
            }
        }

        let observed = panel.observed(t);
        let idx = observed.as_deref();
        let m = idx.map_or(n, |i| i.len());
        if m == 0 {
            x = xp;
            p = pp;
            dx = dxp;
            dp = dpp;
            d2x = d2xp;
            d2p = d2pp;
            continue;
        }

        let sel = |c: &DVector<f64>, h: &M| Measurement {
            c: select_entries(c, idx).into_owned(),
            h: select_rows(h, idx).into_owned(),
        };
        let base = sel(&intercept, &ss.h1);
        let h = &base.h;
        let ht = h.transpose();
        let d_meas: Vec<Measurement> = (0..np).map(|k| sel(&dc[k], &dh[k])).collect();
        let z_full = day_observation(panel, t);
        let z = select_entries(&z_full, idx);
        let u = z.as_ref() - (&base.c + h * &xp);
        let eye = M::identity(m, m);
        let s = h * &pp * &ht + &eye * sigma2;
        let chol = innovation_factor(s, panel, t)?;
        let w = chol.inverse();
        let a = &w * &u;
        let gain = &pp * &ht * &w;
        loglik -= 0.5 * (m as f64 * (2.0 * PI).ln() + log_det(&chol) + u.dot(&a));

        let mut du = Vec::with_capacity(np);
        let mut dht = Vec::with_capacity(np);
        let mut ds = Vec::with_capacity(np);
        let mut dw = Vec::with_capacity(np);
        let mut dk = Vec::with_capacity(np);
        let mut w_ds = Vec::with_capacity(np);
        let mut ds_a = Vec::with_capacity(np);
        let mut w_ds_a = Vec::with_capacity(np);
        let mut w_du = Vec::with_capacity(np);
        for k in 0..np {
            let dm = &d_meas[k];
            let du_k = -(&dm.c + &dm.h * &xp + h * &dxp[k]);
            let dht_k = dm.h.transpose();
            let ds_k = prod3((h, &dm.h), (&pp, &dpp[k]), (&ht, &dht_k)) + &eye * ds2[k];
            let w_ds_k = &w * &ds_k;
            let dw_k = -(&w_ds_k * &w);
            let dk_k = prod3((&pp, &dpp[k]), (&ht, &dht_k), (&w, &dw_k));
            let ds_a_k = &ds_k * &a;
            grad[k] -= 0.5 * (w_ds_k.trace() + 2.0 * du_k.dot(&a) - a.dot(&ds_a_k));
            w_ds_a.push(&w * &ds_a_k);
            w_du.push(&w * &du_k);
            ds_a.push(ds_a_k);
            du.push(du_k);
            dht.push(dht_k);
            ds.push(ds_k);
            dw.push(dw_k);
            dk.push(dk_k);
            w_ds.push(w_ds_k);
        }

        let mut new_d2x = Vec::with_capacity(np * np);
        let mut new_d2p = Vec::with_capacity(np * np);
        for k in 0..np {
            for l in 0..np {
                let kl = pair(k, l);
                let (hk, hl) = (&d_meas[k].h, &d_meas[l].h);
                let c_kl = select_entries(&d2c[kl], idx);
                let h_kl = select_rows(&d2h[kl], idx);
                let h_kl = h_kl.as_ref();
                let ht_kl = h_kl.transpose();
                let d2u = -(c_kl.as_ref() + h_kl * &xp + hk * &dxp[l] + hl * &dxp[k] + h * &d2xp[kl]);
                let d2s = prod3_second(
                    [h, hk, hl, h_kl],
                    [&pp, &dpp[k], &dpp[l], &d2pp[kl]],
                    [&ht, &dht[k], &dht[l], &ht_kl],
                ) + &eye * d2s2[kl];

                let tr_w_d2s = w.component_mul(&d2s).sum();
                let tr_cross = w_ds[l].component_mul(&w_ds[k].transpose()).sum();
                let term = tr_w_d2s - tr_cross + 2.0 * d2u.dot(&a) + 2.0 * du[k].dot(&w_du[l])
                    - 2.0 * w_du[k].dot(&ds_a[l])
                    + 2.0 * ds_a[l].dot(&w_ds_a[k])
                    - 2.0 * w_du[l].dot(&ds_a[k])
                    - a.dot(&(&d2s * &a));
                hess[(k, l)] -= 0.5 * term;

                let d2w = -(&dw[l] * &ds[k] * &w + &w * &d2s * &w + &w * &ds[k] * &dw[l]);
                let d2k = prod3_second(
                    [&pp, &dpp[k], &dpp[l], &d2pp[kl]],
                    [&ht, &dht[k], &dht[l], &ht_kl],
                    [&w, &dw[k], &dw[l], &d2w],
                );
                new_d2x.push(&d2xp[kl] + &d2k * &u + &dk[k] * &du[l] + &dk[l] * &du[k] + &gain * &d2u);
                new_d2p.push(
                    &d2pp[kl]
                        - prod3_second(
                            [&gain, &dk[k], &dk[l], &d2k],
                            [h, hk, hl, h_kl],
                            [&pp, &dpp[k], &dpp[l], &d2pp[kl]],
                        ),
                );
            }
        }
        for k in 0..np {
            dx[k] = &dxp[k] + &dk[k] * &u + &gain * &du[k];
            dp[k] = &dpp[k] - prod3((&gain, &dk[k]), (h, &d_meas[k].h), (&pp, &dpp[k]));
        }
        d2x = new_d2x;
        d2p = new_d2p;
        x = &xp + &gain * &u;
        p = &pp - &gain * h * &pp;
    }

    let finite = loglik.is_finite() && grad.iter().chain(hess.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::FilterDegenerate {
            date: panel.dates.last().map(|d| d.to_string()).unwrap_or_default(),
        });
    }
    let asym = &hess - hess.transpose();
    let asymmetry = asym.amax();
    let hessian = (&hess + hess.transpose()) * 0.5;
    Ok(HessianOutput {
        loglik,
        gradient: grad,
        hessian,
        asymmetry,
    })
}
