mod common;

use common::mc_zero_prices;
use kalman_affine::factor::{conditional_moments, loadings, sample_transition, stationary_init};
use kalman_affine::{FactorKind, FactorParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_coupon_prices_match_monte_carlo() {
    let cases = [
        (FactorKind::Vasicek, FactorParams::new(0.8, 0.04, 0.02), 0.025),
        (FactorKind::Cir, FactorParams::new(0.6, 0.04, 0.12), 0.03),
    ];
    let maturities = [0.5, 2.0, 5.0];
    for (i, (kind, p, r0)) in cases.iter().enumerate() {
        let mc = mc_zero_prices(*kind, p, *r0, &maturities, 1.0 / 52.0, 20_000, 100 + i as u64);
        for (t, est) in maturities.iter().zip(&mc) {
            let exact = loadings(*kind, *t, p).unwrap().price(*r0);
            let z = (est.mean - exact) / est.std_error;
            assert!(z.abs() < 4.0, "{kind:?} t={t}: mc {} exact {exact} z {z}", est.mean);
        }
    }
}

/// Closed-form transition moments written out independently of the library.
fn reference_moments(kind: FactorKind, p: &FactorParams, r: f64, dt: f64) -> (f64, f64) {
    let e = (-p.kappa * dt).exp();
    // 1 - e^{-kappa dt}, without cancellation for small kappa dt
    let one_minus_e = -(-p.kappa * dt).exp_m1();
    let mean = p.eta + (r - p.eta) * e;
    let th2 = p.theta * p.theta;
    let var = match kind {
        FactorKind::Vasicek => th2 * -(-2.0 * p.kappa * dt).exp_m1() / (2.0 * p.kappa),
        FactorKind::Cir => r * th2 / p.kappa * e * one_minus_e + p.eta * th2 / (2.0 * p.kappa) * one_minus_e.powi(2),
    };
    (mean, var)
}

#[test]
fn transition_moments_match_closed_forms() {
    for (kind, p) in [
        (FactorKind::Vasicek, FactorParams::new(0.3, 0.05, 0.01)),
        (FactorKind::Cir, FactorParams::new(1.1, 0.02, 0.2)),
        (FactorKind::Vasicek, FactorParams::new(1e-7, 0.05, 0.01)),
    ] {
        for dt in [1.0 / 252.0, 0.5, 4.0] {
            let m = conditional_moments(&p, kind, 0.031, dt).unwrap();
            let (mean, var) = reference_moments(kind, &p, 0.031, dt);
            assert!((m.mean - mean).abs() < 1e-14);
            assert!((m.variance - var).abs() <= 1e-9 * var, "{kind:?} dt {dt}: {} vs {var}", m.variance);
        }
    }
}

#[test]
fn exact_sampler_reproduces_transition_moments() {
    let n = 200_000;
    for (kind, p, r) in [
        (FactorKind::Vasicek, FactorParams::new(0.5, 0.04, 0.015), 0.01),
        (FactorKind::Cir, FactorParams::new(0.7, 0.03, 0.15), 0.05),
        // Feller condition violated: 2 kappa eta < theta^2.
        (FactorKind::Cir, FactorParams::new(0.2, 0.01, 0.3), 0.002),
    ] {
        let dt = 0.75;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws: Vec<f64> = (0..n).map(|_| sample_transition(&p, kind, r, dt, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m, v) = reference_moments(kind, &p, r, dt);
        let se_mean = (v / n as f64).sqrt();
        assert!((mean - m).abs() < 4.0 * se_mean, "{kind:?}: mean {mean} vs {m}");
        assert!((var - v).abs() < 0.02 * v, "{kind:?}: var {var} vs {v}");
        if kind == FactorKind::Cir {
            assert!(draws.iter().all(|x| *x >= 0.0));
        }
    }
}

#[test]
fn stationary_law_is_the_long_horizon_limit() {
    for kind in [FactorKind::Vasicek, FactorKind::Cir] {
        let p = FactorParams::new(0.9, 0.035, 0.07);
        let s = stationary_init(&p, kind).unwrap();
        let far = conditional_moments(&p, kind, 0.2, 80.0).unwrap();
        assert!((s.mean - far.mean).abs() < 1e-12);
        assert!((s.variance - far.variance).abs() < 1e-12 * s.variance);
    }
}

#[test]
fn yields_of_vasicek_and_cir_agree_at_vanishing_volatility() {
    // With theta -> 0 both models collapse to the same deterministic rate path.
    let t = 4.0;
    let v = loadings(FactorKind::Vasicek, t, &FactorParams::new(0.6, 0.05, 1e-9)).unwrap();
    let c = loadings(FactorKind::Cir, t, &FactorParams::new(0.6, 0.05, 1e-6)).unwrap();
    assert!((v.b - c.b).abs() < 1e-9);
    assert!((v.a - c.a).abs() < 1e-9);
}
