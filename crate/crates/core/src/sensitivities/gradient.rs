use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{self, day_observation, innovation_factor, log_det, select_entries, select_rows, YieldPanel};
use crate::term_structure::{build_state_space, ModelSpec};

use super::{Blocks, ParamVector};

/// Gradient of the filter log-likelihood at `theta`.
pub fn loglik_gradient(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> Result<DVector<f64>> {
    loglik_and_gradient(spec, panel, theta).map(|(_, g)| g)
}

/// Log-likelihood and its gradient from one pass of the filter.
pub fn loglik_and_gradient(
    spec: &ModelSpec,
    panel: &YieldPanel,
    theta: &ParamVector,
) -> Result<(f64, DVector<f64>)> {
    let spec = theta.apply(spec)?;
    run(&spec, panel, theta, true)
}

pub(crate) fn run(
    spec: &ModelSpec,
    panel: &YieldPanel,
    theta: &ParamVector,
    init_partials: bool,
) -> Result<(f64, DVector<f64>)> {
    panel.validate()?;
    panel.check_against(spec)?;
    let ss = build_state_space(spec)?;
    let intercept = ss.intercept();
    let phi = ss.phi1.diagonal();
    let d = spec.dim();
    let np = theta.len();
    let sigma2 = spec.sigma_eps * spec.sigma_eps;
    let blocks = Blocks::new(spec, &theta.ids, false)?;

    let init = kalman::initial_state(spec)?;
    let (mut x, mut p) = (init.x, init.p);
    let mut dx = vec![DVector::zeros(d); np];
    let mut dp = vec![DMatrix::zeros(d, d); np];
    if init_partials {
        for (k, o) in blocks.owner.iter().enumerate() {
            if let Some((i, _)) = *o {
                dx[k][i] = blocks.first[k].dx0;
                dp[k][(i, i)] = blocks.first[k].dp0;
            }
        }
    }

    let mut loglik = 0.0;
    let mut grad = DVector::<f64>::zeros(np);
    let mut dxp = vec![DVector::zeros(d); np];
    let mut dpp = vec![DMatrix::zeros(d, d); np];

    for t in 0..panel.n_days() {
        // Prediction and its partials.
        let q = DVector::from_fn(d, |j, _| blocks.noise[j].value(x[j]));
        let xp = &ss.phi0 + phi.component_mul(&x);
        let pp = DMatrix::from_fn(d, d, |a, b| phi[a] * p[(a, b)] * phi[b]) + DMatrix::from_diagonal(&q);
        for k in 0..np {
            let fk = &blocks.first[k];
            let mut v = phi.component_mul(&dx[k]);
            let mut m = DMatrix::from_fn(d, d, |a, b| phi[a] * dp[k][(a, b)] * phi[b]);
            if let Some((i, _)) = blocks.owner[k] {
                v[i] += fk.dphi0 + fk.dphi1 * x[i];
                for b in 0..d {
                    m[(i, b)] += fk.dphi1 * p[(i, b)] * phi[b];
                    m[(b, i)] += phi[b] * p[(b, i)] * fk.dphi1;
                }
            }
            for j in 0..d {
                m[(j, j)] += blocks.noise[j].first(x[j], dx[k][j], blocks.local[j][k]);
            }
            dxp[k] = v;
            dpp[k] = m;
        }

        let observed = panel.observed(t);
        let idx = observed.as_deref();
        let m = idx.map_or(panel.n_maturities(), |i| i.len());
        if m == 0 {
            x = xp;
            p = pp;
            std::mem::swap(&mut dx, &mut dxp);
            std::mem::swap(&mut dp, &mut dpp);
            continue;
        }

        // Measurement update.
        let h = select_rows(&ss.h1, idx);
        let h = h.as_ref();
        let c = select_entries(&intercept, idx);
        let z_full = day_observation(panel, t);
        let z = select_entries(&z_full, idx);
        let u = z.as_ref() - (c.as_ref() + h * &xp);
        let hp = h * &pp;
        let mut s = &hp * h.transpose();
        for j in 0..m {
            s[(j, j)] += sigma2;
        }
        let chol = innovation_factor(s, panel, t)?;
        let w = chol.inverse();
        let a = &w * &u;
        let gain = (&w * &hp).transpose();
        loglik -= 0.5 * (m as f64 * (2.0 * PI).ln() + log_det(&chol) + u.dot(&a));

        for k in 0..np {
            let fk = &blocks.first[k];
            // du = -dc - dH xp - H dxp
            let mut du = -(h * &dxp[k]);
            // dS = dH Pp H' + H dPp H' + H Pp dH' + dsigma2 I
            let mut ds = h * &dpp[k] * h.transpose();
            let mut pp_dht = DMatrix::zeros(d, m);
            let mut k_dh_pp = DMatrix::zeros(d, d);
            if let Some((i, _)) = blocks.owner[k] {
                let dc = select_entries(&fk.dh0, idx);
                let dh = select_entries(&fk.dh1, idx);
                du -= dc.as_ref() + dh.as_ref() * xp[i];
                // dH = dh e_i', and (Pp H')[i, :] = (H Pp)[:, i]'.
                let hp_col = hp.column(i);
                ds += dh.as_ref() * hp_col.transpose() + hp_col * dh.transpose();
                pp_dht = pp.column(i) * dh.transpose();
                k_dh_pp = (&gain * dh.as_ref()) * pp.row(i);
            }
            for j in 0..m {
                ds[(j, j)] += fk.dsigma2;
            }
            let tr = w.component_mul(&ds).sum();
            let quad = a.dot(&(&ds * &a));
            grad[k] -= 0.5 * (2.0 * du.dot(&a) + tr - quad);

            // dK = (dPp H' + Pp dH' - K dS) W
            let dk = (&dpp[k] * h.transpose() + pp_dht - &gain * &ds) * &w;
            let new_dx = &dxp[k] + &dk * &u + &gain * &du;
            let new_dp = &dpp[k] - &dk * &hp - k_dh_pp - &gain * h * &dpp[k];
            dx[k] = new_dx;
            dp[k] = new_dp;
        }
        x = &xp + &gain * &u;
        p = &pp - &gain * &hp;
    }
    if !loglik.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::FilterDegenerate {
            date: panel.dates.last().map(|d| d.to_string()).unwrap_or_default(),
        });
    }
    Ok((loglik, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{Factor, FactorParams};
    use crate::kalman::loglik;
    use crate::sensitivities::testing::{simulate, two_factor};

    fn ll_at(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector, v: &[f64]) -> f64 {
        loglik(&theta.with_values(v.to_vec()).apply(spec).unwrap(), panel).unwrap()
    }

    fn fd_gradient(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> Vec<f64> {
        (0..theta.len())
            .map(|k| {
                let x = theta.values[k];
                let h = 1e-5 * x.abs();
                let at = |dx: f64| {
                    let mut v = theta.values.clone();
                    v[k] = x + dx;
                    ll_at(spec, panel, theta, &v)
                };
                (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
            })
            .collect()
    }

    #[test]
    fn value_matches_filter() {
        let spec = two_factor();
        let panel = simulate(&spec, 40, 3);
        let theta = ParamVector::from_spec(&spec);
        let (ll, _) = loglik_and_gradient(&spec, &panel, &theta).unwrap();
        assert!((ll - loglik(&spec, &panel).unwrap()).abs() < 1e-9 * ll.abs());
    }

    #[test]
    fn matches_finite_differences() {
        let spec = two_factor();
        let panel = simulate(&spec, 50, 11);
        let theta = ParamVector::from_spec(&spec);
        let g = loglik_gradient(&spec, &panel, &theta).unwrap();
        let fd = fd_gradient(&spec, &panel, &theta);
        for k in 0..theta.len() {
            let scale = g[k].abs().max(1.0);
            assert!((g[k] - fd[k]).abs() < 1e-6 * scale, "{}: {} vs {}", theta.ids[k].label(), g[k], fd[k]);
        }
    }

    #[test]
    fn zeroed_initial_partials_are_detected() {
        let spec = two_factor();
        let panel = simulate(&spec, 50, 11);
        let theta = ParamVector::from_spec(&spec);
        let (_, wrong) = run(&spec, &panel, &theta, false).unwrap();
        let fd = fd_gradient(&spec, &panel, &theta);
        let worst = (0..theta.len())
            .map(|k| (wrong[k] - fd[k]).abs() / wrong[k].abs().max(1.0))
            .fold(0.0, f64::max);
        assert!(worst > 1e-4, "mismatch only {worst}");
    }

    #[test]
    fn missing_cells_and_empty_days() {
        let spec = two_factor();
        let mut panel = simulate(&spec, 30, 5);
        let mut mask = DMatrix::from_element(30, 5, true);
        mask[(3, 1)] = false;
        mask[(7, 4)] = false;
        for j in 0..5 {
            mask[(10, j)] = false;
        }
        panel = YieldPanel::with_mask(panel.dates, panel.maturities, panel.yields, Some(mask)).unwrap();
        let theta = ParamVector::from_spec(&spec);
        let g = loglik_gradient(&spec, &panel, &theta).unwrap();
        let fd = fd_gradient(&spec, &panel, &theta);
        for k in 0..theta.len() {
            assert!((g[k] - fd[k]).abs() < 1e-6 * g[k].abs().max(1.0));
        }
    }

    #[test]
    fn sigma_partial_matches_direct_noise_perturbation() {
        let spec = two_factor();
        let panel = simulate(&spec, 50, 2);
        let theta = ParamVector::from_spec(&spec);
        let g = loglik_gradient(&spec, &panel, &theta).unwrap();
        let k = theta.len() - 1;
        // Perturb the measurement variance itself and apply the chain factor 2 sigma.
        let s2 = spec.sigma_eps * spec.sigma_eps;
        let h = 1e-6 * s2;
        let at = |v: f64| {
            let mut sp = spec.clone();
            sp.sigma_eps = v.sqrt();
            loglik(&sp, &panel).unwrap()
        };
        let d_var = (at(s2 + h) - at(s2 - h)) / (2.0 * h);
        let expected = d_var * 2.0 * spec.sigma_eps;
        assert!((g[k] - expected).abs() < 1e-5 * expected.abs().max(1.0));
    }

    #[test]
    fn pinned_eta_layout() {
        let spec = ModelSpec::new(
            vec![
                Factor::vasicek(FactorParams::new(0.6, 0.02, 0.015)),
                Factor::vasicek(FactorParams::zero_mean(1.8, 0.01)),
            ],
            0.0005,
            1.0 / 52.0,
            vec![0.5, 2.0, 5.0, 10.0, 20.0],
        )
        .unwrap();
        let panel = simulate(&spec, 50, 9);
        let theta = ParamVector::from_spec(&spec);
        assert_eq!(theta.len(), 6);
        let g = loglik_gradient(&spec, &panel, &theta).unwrap();
        let fd = fd_gradient(&spec, &panel, &theta);
        for k in 0..theta.len() {
            assert!((g[k] - fd[k]).abs() < 1e-6 * g[k].abs().max(1.0));
        }
    }
}
