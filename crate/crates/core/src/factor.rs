//! Single-factor Vasicek and CIR short-rate dynamics: bond-price loadings,
//! conditional transition moments and exact transition sampling.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Vasicek,
    Cir,
}

impl FactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Vasicek => "vasicek",
            FactorKind::Cir => "cir",
        }
    }
}

/// Parameters of one factor `dr = kappa (eta - r) dt + theta r^{gamma} dW`,
/// with `gamma = 0` (Vasicek) or `gamma = 1/2` (CIR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    /// Mean-reversion speed, per year.
    pub kappa: f64,
    /// Long-run level.
    pub eta: f64,
    /// Volatility.
    pub theta: f64,
    /// When set, `eta` is held at zero and is not a free parameter.
    #[serde(default)]
    pub eta_fixed_zero: bool,
}

impl FactorParams {
    pub fn new(kappa: f64, eta: f64, theta: f64) -> Self {
        FactorParams {
            kappa,
            eta,
            theta,
            eta_fixed_zero: false,
        }
    }

    /// A factor whose long-run level is pinned at zero.
    pub fn zero_mean(kappa: f64, theta: f64) -> Self {
        FactorParams {
            kappa,
            eta: 0.0,
            theta,
            eta_fixed_zero: true,
        }
    }

    pub fn validate(&self, kind: FactorKind) -> Result<()> {
        let FactorParams {
            kappa, eta, theta, ..
        } = *self;
        if !(kappa.is_finite() && eta.is_finite() && theta.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite {} parameters ({kappa}, {eta}, {theta})",
                kind.name()
            )));
        }
        if kappa <= 0.0 {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        if theta < 0.0 {
            return Err(Error::invalid(format!("theta must be non-negative, got {theta}")));
        }
        if eta < 0.0 {
            return Err(Error::invalid(format!("eta must be non-negative, got {eta}")));
        }
        if self.eta_fixed_zero && eta != 0.0 {
            return Err(Error::invalid("eta is pinned to zero but a non-zero value was given"));
        }
        Ok(())
    }

    /// `2 kappa eta > theta^2`: the origin is inaccessible for a CIR factor.
    pub fn feller_condition(&self) -> bool {
        2.0 * self.kappa * self.eta > self.theta * self.theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    pub params: FactorParams,
}

impl Factor {
    pub fn vasicek(params: FactorParams) -> Self {
        Factor {
            kind: FactorKind::Vasicek,
            params,
        }
    }

    pub fn cir(params: FactorParams) -> Self {
        Factor {
            kind: FactorKind::Cir,
            params,
        }
    }
}

/// Log-price intercept and slope: `P(0, t) = exp(a + b r_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loadings {
    pub a: f64,
    pub b: f64,
}

impl Loadings {
    pub fn price(&self, r0: f64) -> f64 {
        (self.a + self.b * r0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub variance: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("maturity must be finite and >= 0, got {t}")));
    }
    Ok(())
}

fn check_step(dt: f64) -> Result<()> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

pub fn vasicek_loadings(t: f64, p: &FactorParams) -> Result<Loadings> {
    check_time(t)?;
    p.validate(FactorKind::Vasicek)?;
    let x = p.kappa * t;
    let phi = expfn::phi1(x).v;
    let level = expfn::one_minus_phi1(x).v;
    let convexity = expfn::convexity(x).v;
    Ok(Loadings {
        a: -p.eta * t * level + p.theta * p.theta * t * t * t * convexity,
        b: -t * phi,
    })
}

/// CIR loadings in the form
/// `a = (2 kappa eta / theta^2) log(2 b e^{(kappa+b)t/2} / (2b + (kappa+b)(e^{bt}-1)))`,
/// `b = -2 (e^{bt}-1) / (2b + (kappa+b)(e^{bt}-1))`, `b = sqrt(kappa^2 + 2 theta^2)`.
pub fn cir_loadings(t: f64, p: &FactorParams) -> Result<Loadings> {
    check_time(t)?;
    p.validate(FactorKind::Cir)?;
    if p.theta <= 0.0 {
        return Err(Error::invalid("CIR loadings need theta > 0"));
    }
    let FactorParams {
        kappa, eta, theta, ..
    } = *p;
    let b = (kappa * kappa + 2.0 * theta * theta).sqrt();
    let growth = (b * t).exp_m1();
    let denom = 2.0 * b + (kappa + b) * growth;
    let a = 2.0 * kappa * eta / (theta * theta) * cir_log_factor(kappa, theta, t);
    let slope = -2.0 * growth / denom;
    if !(a.is_finite() && slope.is_finite()) {
        return Err(Error::invalid(format!("CIR loadings overflow at t = {t}")));
    }
    Ok(Loadings { a, b: slope })
}

/// The logarithm in the CIR intercept. With `s = kappa + b` and
/// `b - kappa = 2 theta^2 / s` it equals
/// `-log(1 + w1 (e^{-s t/2} - 1) + w2 (e^{(b-kappa) t/2} - 1))`,
/// `w1 = (b - kappa) / 2b`, `w2 = s / 2b`, which avoids the cancellation of
/// the direct form at short maturities.
pub(crate) fn cir_log_factor(kappa: f64, theta: f64, t: f64) -> f64 {
    let b = (kappa * kappa + 2.0 * theta * theta).sqrt();
    let s = kappa + b;
    let bm = 2.0 * theta * theta / s;
    let g = bm / (2.0 * b) * (-0.5 * s * t).exp_m1() + s / (2.0 * b) * (0.5 * bm * t).exp_m1();
    -g.ln_1p()
}

pub fn loadings(kind: FactorKind, t: f64, p: &FactorParams) -> Result<Loadings> {
    match kind {
        FactorKind::Vasicek => vasicek_loadings(t, p),
        FactorKind::Cir => cir_loadings(t, p),
    }
}

/// Variance pieces of one transition step: `var = q_level + max(r_prev, 0) q_state`.
/// `q_state` is zero for Vasicek factors.
pub(crate) fn transition_variance_parts(kind: FactorKind, p: &FactorParams, dt: f64) -> (f64, f64) {
    let th2 = p.theta * p.theta;
    let x = p.kappa * dt;
    match kind {
        FactorKind::Vasicek => (th2 * dt * expfn::phi1(2.0 * x).v, 0.0),
        FactorKind::Cir => {
            let phi = expfn::phi1(x).v;
            // (1 - e^{-x})^2 / kappa = kappa dt^2 phi^2
            let level = 0.5 * th2 * p.eta * p.kappa * dt * dt * phi * phi;
            // (e^{-x} - e^{-2x}) / kappa = dt e^{-x} phi
            let state = th2 * dt * (-x).exp() * phi;
            (level, state)
        }
    }
}

pub fn conditional_moments(
    p: &FactorParams,
    kind: FactorKind,
    r_prev: f64,
    dt: f64,
) -> Result<ConditionalMoments> {
    if !r_prev.is_finite() {
        return Err(Error::invalid("previous rate is not finite"));
    }
    Ok(Transition::new(p, kind, dt)?.moments(r_prev))
}

/// The exact one-step law of a factor over a fixed step, with the
/// step-dependent constants computed once.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    kind: FactorKind,
    decay: f64,
    drift: f64,
    q_level: f64,
    q_state: f64,
    sampled: bool,
    /// CIR: `r_next = chi2(dof, c r_prev e^{-kappa dt}) / c`.
    c: f64,
    dof: f64,
}

impl Transition {
    pub fn new(p: &FactorParams, kind: FactorKind, dt: f64) -> Result<Self> {
        check_step(dt)?;
        p.validate(kind)?;
        let x = p.kappa * dt;
        let (q_level, q_state) = transition_variance_parts(kind, p, dt);
        let sampled = p.theta != 0.0;
        let (c, dof) = if kind == FactorKind::Cir && sampled {
            if p.eta <= 0.0 {
                return Err(Error::invalid("CIR sampling needs eta > 0"));
            }
            let th2 = p.theta * p.theta;
            (4.0 * p.kappa / (th2 * -(-x).exp_m1()), 4.0 * p.kappa * p.eta / th2)
        } else {
            (0.0, 0.0)
        };
        Ok(Transition {
            kind,
            decay: (-x).exp(),
            drift: p.eta * -(-x).exp_m1(),
            q_level,
            q_state,
            sampled,
            c,
            dof,
        })
    }

    pub fn moments(&self, r_prev: f64) -> ConditionalMoments {
        ConditionalMoments {
            mean: self.drift + self.decay * r_prev,
            variance: self.q_level + r_prev.max(0.0) * self.q_state,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, r_prev: f64, rng: &mut R) -> f64 {
        if !self.sampled {
            return self.moments(r_prev).mean;
        }
        match self.kind {
            FactorKind::Vasicek => {
                let m = self.moments(r_prev);
                let z: f64 = StandardNormal.sample(rng);
                m.mean + m.variance.sqrt() * z
            }
            FactorKind::Cir => {
                let noncentrality = self.c * r_prev.max(0.0) * self.decay;
                noncentral_chi_squared(self.dof, noncentrality, rng) / self.c
            }
        }
    }
}

/// Draws `r_{t+dt}` given `r_t` from the exact transition law: Gaussian for
/// Vasicek, scaled noncentral chi-square for CIR.
pub fn sample_transition<R: Rng + ?Sized>(
    p: &FactorParams,
    kind: FactorKind,
    r_prev: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !r_prev.is_finite() {
        return Err(Error::invalid("previous rate is not finite"));
    }
    Ok(Transition::new(p, kind, dt)?.sample(r_prev, rng))
}

/// Poisson mixture of central chi-squares; valid for every `dof > 0`.
fn noncentral_chi_squared<R: Rng + ?Sized>(dof: f64, noncentrality: f64, rng: &mut R) -> f64 {
    let extra = if noncentrality > 0.0 {
        Poisson::new(0.5 * noncentrality)
            .expect("positive Poisson rate")
            .sample(rng)
    } else {
        0.0
    };
    Gamma::new(0.5 * dof + extra, 2.0)
        .expect("positive gamma shape")
        .sample(rng)
}

/// Kalman filter starting point: the long-run level and stationary variance.
pub fn stationary_init(p: &FactorParams, kind: FactorKind) -> Result<ConditionalMoments> {
    p.validate(kind)?;
    let th2 = p.theta * p.theta;
    let variance = match kind {
        FactorKind::Vasicek => th2 / (2.0 * p.kappa),
        FactorKind::Cir => p.eta * th2 / (2.0 * p.kappa),
    };
    Ok(ConditionalMoments {
        mean: p.eta,
        variance,
    })
}
