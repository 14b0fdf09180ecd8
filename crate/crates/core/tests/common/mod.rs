#![allow(dead_code)]

use chrono::NaiveDate;
use kalman_affine::scenario::simulate_panel;
use kalman_affine::kalman::{filter, loglik};
use kalman_affine::sensitivities::{loglik_gradient, loglik_hessian};
use kalman_affine::term_structure::build_state_space;
use kalman_affine::{Factor, FactorKind, FactorParams, ModelSpec, ParamVector, YieldPanel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub const MATURITIES: [f64; 5] = [0.25, 1.0, 3.0, 5.0, 10.0];

fn cir(k: f64, e: f64, t: f64) -> Factor {
    Factor::cir(FactorParams::new(k, e, t))
}

fn vas(k: f64, e: f64, t: f64) -> Factor {
    Factor::vasicek(FactorParams::new(k, e, t))
}

fn vas0(k: f64, t: f64) -> Factor {
    Factor::vasicek(FactorParams::zero_mean(k, t))
}

/// The eight model structures, with plausible parameter values.
pub fn model_specs() -> Vec<(&'static str, ModelSpec)> {
    let make = |factors: Vec<Factor>| ModelSpec::new(factors, 5e-4, 1.0 / 252.0, MATURITIES.to_vec()).unwrap();
    vec![
        ("1-CIR", make(vec![cir(0.211, 0.0657, 0.0995)])),
        ("1-Vasicek", make(vec![vas(0.2433, 0.0611, 0.0124)])),
        ("2-CIR", make(vec![cir(0.38, 0.04, 0.09), cir(1.2, 0.01, 0.04)])),
        ("2-Vasicek", make(vec![vas(0.27, 0.05, 0.011), vas0(1.5, 0.0175)])),
        ("1-CIR+1-Vasicek", make(vec![cir(0.3, 0.05, 0.06), vas0(0.9, 0.011)])),
        ("3-CIR", make(vec![cir(0.3, 0.03, 0.08), cir(1.0, 0.01, 0.05), cir(2.0, 0.005, 0.1)])),
        ("3-Vasicek", make(vec![vas(0.23, 0.05, 0.011), vas0(1.0, 0.014), vas0(2.5, 0.013)])),
        ("2-CIR+1-Vasicek", make(vec![cir(1.5, 0.035, 0.096), cir(0.3, 0.01, 0.04), vas0(0.33, 0.0136)])),
    ]
}

pub fn synthetic_panel(spec: &ModelSpec, days: usize, seed: u64) -> YieldPanel {
    simulate_panel(spec, days, seed, NaiveDate::from_ymd_opt(2010, 1, 4).unwrap())
        .unwrap()
        .panel
}

/// Every parameter scaled by an independent factor in `[1 - spread, 1 + spread]`.
pub fn perturbed<R: Rng>(theta: &ParamVector, spread: f64, rng: &mut R) -> ParamVector {
    let values = theta
        .values
        .iter()
        .map(|v| v * rng.random_range(1.0 - spread..1.0 + spread))
        .collect();
    theta.with_values(values)
}

/// Five-point central difference of `f` along coordinate `k`.
pub fn fd5<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut y = x.to_vec();
        y[k] += s * h;
        f(&y)
    };
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo `E[exp(-int_0^T r)]` at each maturity (a multiple of `step`)
/// from exact transitions on a grid of width `step` and the trapezoid rule.
pub fn mc_zero_prices(
    kind: kalman_affine::FactorKind,
    p: &FactorParams,
    r0: f64,
    maturities: &[f64],
    step: f64,
    paths: usize,
    seed: u64,
) -> Vec<McEstimate> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rayon::prelude::*;

    const BLOCK: usize = 4096;
    let marks: Vec<usize> = maturities.iter().map(|t| (t / step).round() as usize).collect();
    let last = *marks.iter().max().unwrap();
    let law = kalman_affine::factor::Transition::new(p, kind, step).unwrap();
    let blocks: Vec<(f64, Vec<(f64, f64)>)> = (0..paths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(paths - b * BLOCK);
            let mut sums = vec![(0.0, 0.0); marks.len()];
            for _ in 0..count {
                let mut r = r0;
                let mut integral = 0.0;
                let mut next = 0;
                for s in 1..=last {
                    let r_next = law.sample(r, &mut rng);
                    integral += 0.5 * step * (r + r_next);
                    r = r_next;
                    for (m, &mark) in marks.iter().enumerate().skip(next) {
                        if mark == s {
                            let v = (-integral).exp();
                            sums[m].0 += v;
                            sums[m].1 += v * v;
                            next = m + 1;
                        }
                    }
                }
            }
            (count as f64, sums)
        })
        .collect();
    (0..marks.len())
        .map(|m| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (_, sums) in &blocks {
                s1 += sums[m].0;
                s2 += sums[m].1;
            }
            let n = paths as f64;
            let mean = s1 / n;
            let var = (s2 / n - mean * mean) * n / (n - 1.0);
            McEstimate {
                mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect()
}

/// `Phi^{-1}(0.95)`.
pub const Z95: f64 = 1.6448536269514722;

/// Exact law of the model yield at `tau` of an all-Vasicek model `h` steps
/// after `x0`: `(mean, sd)`.
pub fn vasicek_yield_law(spec: &ModelSpec, x0: &[f64], steps: usize, tau: f64) -> (f64, f64) {
    let horizon = steps as f64 * spec.dt;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (i, f) in spec.factors.iter().enumerate() {
        let p = &f.params;
        let l = kalman_affine::factor::loadings(f.kind, tau, p).unwrap();
        let e = (-p.kappa * horizon).exp();
        let m = p.eta + (x0[i] - p.eta) * e;
        let v = p.theta * p.theta * -(-2.0 * p.kappa * horizon).exp_m1() / (2.0 * p.kappa);
        mean += -l.a / tau - l.b / tau * m;
        var += (l.b / tau).powi(2) * v;
    }
    (mean, var.sqrt())
}

/// Standard error of the sample `q`-quantile of `N(mu, sd^2)` from `n` draws.
pub fn normal_quantile_se(sd: f64, z: f64, q: f64, n: usize) -> f64 {
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / sd;
    (q * (1.0 - q) / n as f64).sqrt() / density
}

fn ll_at(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector, x: &[f64]) -> f64 {
    let s = theta.with_values(x.to_vec()).apply(spec).unwrap();
    loglik(&s, panel).unwrap()
}

/// Which CIR filtered states are positive on each day. The noise of the next
/// step uses `max(x, 0)`, so the likelihood is smooth in the parameters only
/// while this pattern is unchanged.
pub fn clipping_pattern(spec: &ModelSpec, panel: &YieldPanel) -> Vec<bool> {
    let out = filter(spec, panel).unwrap();
    let mut signs = Vec::new();
    for step in &out.steps {
        for (i, f) in spec.factors.iter().enumerate() {
            if f.kind == FactorKind::Cir {
                signs.push(step.x_filt[i] > 0.0);
            }
        }
    }
    signs
}

/// `h` divided by 10 until the whole 5-point stencil along `k` stays on the
/// centre's smooth piece, at most three times.
pub fn smooth_step(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector, k: usize, mut h: f64) -> f64 {
    let at = |x: &[f64]| clipping_pattern(&theta.with_values(x.to_vec()).apply(spec).unwrap(), panel);
    let centre = at(&theta.values);
    for _ in 0..3 {
        let crosses = [-2.0, -1.0, 1.0, 2.0].iter().any(|s| {
            let mut x = theta.values.clone();
            x[k] += s * h;
            at(&x) != centre
        });
        if !crosses {
            break;
        }
        h /= 10.0;
    }
    h
}

/// Worst component-wise relative error of the analytic gradient against
/// 5-point differences of the log-likelihood, with the offending entry.
pub fn gradient_error(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> (f64, String) {
    let g = loglik_gradient(spec, panel, theta).unwrap();
    let mut worst = (0.0, String::new());
    for k in 0..theta.len() {
        let h = smooth_step(spec, panel, theta, k, 1e-4 * theta.values[k]);
        let fd = fd5(|x| ll_at(spec, panel, theta, x), &theta.values, k, h);
        let e = rel_err(g[k], fd, 1.0);
        if e > worst.0 {
            worst = (e, format!("{} analytic {:e} fd {:e}", theta.ids[k].label(), g[k], fd));
        }
    }
    worst
}

/// Worst relative error of the analytic Hessian against differences of the
/// analytic gradient, and its asymmetry relative to `max|H|`.
pub fn hessian_error(spec: &ModelSpec, panel: &YieldPanel, theta: &ParamVector) -> (f64, f64) {
    let out = loglik_hessian(spec, panel, theta).unwrap();
    let h = &out.hessian;
    let np = theta.len();
    let mut worst: f64 = 0.0;
    for l in 0..np {
        let step = smooth_step(spec, panel, theta, l, 1e-3 * theta.values[l]);
        let col: Vec<f64> = (0..np)
            .map(|k| {
                fd5(
                    |x| loglik_gradient(spec, panel, &theta.with_values(x.to_vec())).unwrap()[k],
                    &theta.values,
                    l,
                    step,
                )
            })
            .collect();
        for k in 0..np {
            let floor = 1e-6 * (h[(k, k)] * h[(l, l)]).abs().sqrt();
            worst = worst.max(rel_err(h[(k, l)], col[k], floor));
        }
    }
    let max = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (worst, out.asymmetry / max)
}

/// Log-density of the stacked observations under the joint Gaussian law of
/// the state path started from the stationary distribution.
#[allow(clippy::needless_range_loop)]
pub fn joint_gaussian_loglik(spec: &ModelSpec, panel: &YieldPanel) -> f64 {
    let ss = build_state_space(spec).unwrap();
    let d = spec.dim();
    let n = spec.n_maturities();
    let t_len = panel.yields.nrows();
    let decay: Vec<f64> = spec.factors.iter().map(|f| (-f.params.kappa * spec.dt).exp()).collect();
    let q: Vec<f64> = spec
        .factors
        .iter()
        .map(|f| {
            let k = f.params.kappa;
            f.params.theta.powi(2) * (1.0 - (-2.0 * k * spec.dt).exp()) / (2.0 * k)
        })
        .collect();

    // Per-factor means and variances of x_1..x_T, x_0 ~ N(eta, theta^2 / 2 kappa).
    let mut mean = vec![vec![0.0; d]; t_len];
    let mut var = vec![vec![0.0; d]; t_len];
    for (i, f) in spec.factors.iter().enumerate() {
        let mut m = f.params.eta;
        let mut v = f.params.theta.powi(2) / (2.0 * f.params.kappa);
        for t in 0..t_len {
            m = f.params.eta * (1.0 - decay[i]) + decay[i] * m;
            v = decay[i] * decay[i] * v + q[i];
            mean[t][i] = m;
            var[t][i] = v;
        }
    }
    let intercept = ss.h0.column_sum();
    let big = t_len * n;
    let mut mu = DVector::zeros(big);
    let mut cov = DMatrix::zeros(big, big);
    let mut z = DVector::zeros(big);
    for t in 0..t_len {
        for j in 0..n {
            let r = t * n + j;
            mu[r] = intercept[j] + (0..d).map(|i| ss.h1[(j, i)] * mean[t][i]).sum::<f64>();
            z[r] = panel.yields[(t, j)];
        }
    }
    for s in 0..t_len {
        for t in 0..t_len {
            let (lo, hi) = (s.min(t), s.max(t));
            for j in 0..n {
                for k in 0..n {
                    let mut c = 0.0;
                    for i in 0..d {
                        // Cov(x_hi, x_lo) = decay^(hi - lo) Var(x_lo)
                        c += ss.h1[(j, i)] * ss.h1[(k, i)] * decay[i].powi((hi - lo) as i32) * var[lo][i];
                    }
                    if s == t && j == k {
                        c += spec.sigma_eps.powi(2);
                    }
                    cov[(s * n + j, t * n + k)] = c;
                }
            }
        }
    }
    let chol = cov.cholesky().unwrap();
    let r = &z - &mu;
    let quad = r.dot(&chol.solve(&r));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (big as f64 * (2.0 * PI).ln() + logdet + quad)
}

/// 1 to 3 Vasicek factors observed at 1 to 3 maturities.
pub fn random_vasicek_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let d = rng.random_range(1..=3);
    let n = rng.random_range(1..=3);
    let factors = (0..d)
        .map(|i| {
            let k = rng.random_range(0.1..2.0);
            let th = rng.random_range(0.005..0.03);
            if i == 0 {
                Factor::vasicek(FactorParams::new(k, rng.random_range(0.0..0.06), th))
            } else {
                Factor::vasicek(FactorParams::zero_mean(k, th))
            }
        })
        .collect();
    let all = [0.5, 1.0, 2.0, 5.0, 10.0];
    let mut maturities: Vec<f64> = all.iter().copied().filter(|_| rng.random_bool(0.6)).take(n).collect();
    if maturities.is_empty() {
        maturities.push(3.0);
    }
    ModelSpec::new(factors, rng.random_range(2e-4..2e-3), 1.0 / 52.0, maturities).unwrap()
}
