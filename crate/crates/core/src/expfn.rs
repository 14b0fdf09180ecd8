//! Exponential ratios that lose precision when evaluated naively for small
//! arguments. Each helper returns the value together with its first two
//! derivatives in `x`; below `SERIES_CUTOFF` a Taylor series is summed.

const SERIES_CUTOFF: f64 = 1.0;
const SERIES_TERMS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

fn series(x: f64, coeff: impl Fn(usize) -> f64) -> Jet {
    let mut v = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    // Horner-free accumulation; terms decay like (2x)^k / k!.
    let mut pow = 1.0;
    let mut pow_m1 = 0.0;
    let mut pow_m2 = 0.0;
    for k in 0..SERIES_TERMS {
        let c = coeff(k);
        v += c * pow;
        d1 += c * k as f64 * pow_m1;
        d2 += c * (k * k.saturating_sub(1)) as f64 * pow_m2;
        pow_m2 = pow_m1;
        pow_m1 = pow;
        pow *= x;
    }
    Jet { v, d1, d2 }
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

fn sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `(1 - e^{-x}) / x`.
pub(crate) fn phi1(x: f64) -> Jet {
    if x.abs() < SERIES_CUTOFF {
        return series(x, |k| sign(k) / factorial(k + 1));
    }
    let e = (-x).exp();
    let one_minus_e = -(-x).exp_m1();
    Jet {
        v: one_minus_e / x,
        d1: (x * e - one_minus_e) / (x * x),
        d2: -e / x - 2.0 * e / (x * x) + 2.0 * one_minus_e / (x * x * x),
    }
}

/// `1 - (1 - e^{-x}) / x`.
pub(crate) fn one_minus_phi1(x: f64) -> Jet {
    if x.abs() < SERIES_CUTOFF {
        return series(x, |k| if k == 0 { 0.0 } else { -sign(k) / factorial(k + 1) });
    }
    let p = phi1(x);
    Jet {
        v: 1.0 - p.v,
        d1: -p.d1,
        d2: -p.d2,
    }
}

/// `(1 / 2x^2) * int_0^1 (1 - e^{-x v})^2 dv`, the convexity kernel of the
/// integrated Ornstein-Uhlenbeck process. Tends to 1/6 as x -> 0.
pub(crate) fn convexity(x: f64) -> Jet {
    if x.abs() < SERIES_CUTOFF {
        return series(x, |j| {
            let k = j + 2;
            0.5 * sign(k) * (2f64.powi(k as i32) - 2.0) / (factorial(k) * (k + 1) as f64)
        });
    }
    let p = phi1(x);
    let q = phi1(2.0 * x);
    let n = 1.0 - 2.0 * p.v + q.v;
    let n1 = -2.0 * p.d1 + 2.0 * q.d1;
    let n2 = -2.0 * p.d2 + 4.0 * q.d2;
    let x2 = x * x;
    Jet {
        v: n / (2.0 * x2),
        d1: n1 / (2.0 * x2) - n / (x2 * x),
        d2: n2 / (2.0 * x2) - 2.0 * n1 / (x2 * x) + 3.0 * n / (x2 * x2),
    }
}
