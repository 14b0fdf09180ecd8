//! Monte Carlo simulation of factor paths, forecast yield-curve
//! distributions and synthetic yield panels.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{sample_transition, Transition};
use crate::kalman::YieldPanel;
use crate::term_structure::{build_state_space, ModelSpec};

/// Paths per random stream; stream `k` of the master seed drives chunk `k`.
pub const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRequest {
    /// Steps ahead, each step being `spec.dt`.
    pub horizons: Vec<usize>,
    pub paths: usize,
    /// Levels in (0, 100).
    pub percentiles: Vec<f64>,
    pub seed: u64,
    /// Keep the simulated states at every horizon.
    pub keep_states: bool,
    pub workers: Option<usize>,
}

impl Default for ForecastRequest {
    fn default() -> Self {
        ForecastRequest {
            horizons: vec![5, 10, 20, 60, 120, 260],
            paths: 10_000,
            percentiles: vec![5.0, 95.0],
            seed: 0,
            keep_states: false,
            workers: None,
        }
    }
}

impl ForecastRequest {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("horizons must be positive and strictly increasing"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("at least one path is required"));
        }
        if self.percentiles.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            return Err(Error::invalid("percentiles must lie in (0, 100)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonForecast {
    pub horizon: usize,
    /// Per maturity.
    pub mean: Vec<f64>,
    /// `[level][maturity]`, levels as in the request.
    pub percentiles: Vec<Vec<f64>>,
    /// `[path][factor]` when requested.
    pub states: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub maturities: Vec<f64>,
    pub levels: Vec<f64>,
    pub horizons: Vec<HorizonForecast>,
}

/// States of every path at the recorded steps: `[step][path]` of `d`-vectors,
/// step 0 being `x_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPaths {
    pub steps: Vec<usize>,
    pub states: Vec<Vec<DVector<f64>>>,
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn check_start(spec: &ModelSpec, x_start: &DVector<f64>) -> Result<()> {
    spec.validate()?;
    if x_start.len() != spec.dim() || x_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("start state must be finite with one entry per factor"));
    }
    Ok(())
}

/// Runs `paths` independent exact-transition paths and records the states
/// after each step count in `record` (increasing).
fn simulate_recorded(
    spec: &ModelSpec,
    x_start: &DVector<f64>,
    record: &[usize],
    paths: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let last = record.last().copied().unwrap_or(0);
    let chunks: Vec<usize> = (0..paths.div_ceil(CHUNK)).collect();
    let laws = spec
        .factors
        .iter()
        .map(|f| Transition::new(&f.params, f.kind, spec.dt))
        .collect::<Result<Vec<_>>>()?;
    let run_chunk = |&c: &usize| -> Result<Vec<Vec<DVector<f64>>>> {
        let mut rng = chunk_rng(seed, c);
        let count = CHUNK.min(paths - c * CHUNK);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = x_start.clone();
            let mut rec = Vec::with_capacity(record.len());
            let mut next = 0;
            while next < record.len() && record[next] == 0 {
                rec.push(x.clone());
                next += 1;
            }
            for step in 1..=last {
                for (i, law) in laws.iter().enumerate() {
                    x[i] = law.sample(x[i], &mut rng);
                }
                while next < record.len() && record[next] == step {
                    rec.push(x.clone());
                    next += 1;
                }
            }
            out.push(rec);
        }
        Ok(out)
    };
    let run = || chunks.par_iter().map(run_chunk).collect::<Result<Vec<_>>>();
    let per_chunk = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    // [path][record] -> [record][path]
    let flat: Vec<Vec<DVector<f64>>> = per_chunk.into_iter().flatten().collect();
    Ok((0..record.len())
        .map(|r| flat.iter().map(|p| p[r].clone()).collect())
        .collect())
}

/// Every step from 0 to `steps` of `paths` paths started at `x_start`.
pub fn simulate_factors(
    spec: &ModelSpec,
    x_start: &DVector<f64>,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<FactorPaths> {
    check_start(spec, x_start)?;
    let record: Vec<usize> = (0..=steps).collect();
    let states = simulate_recorded(spec, x_start, &record, paths, seed, None)?;
    Ok(FactorPaths { steps: record, states })
}

/// Inclusive linear interpolation between order statistics:
/// position `p / 100 * (N - 1)` of the sorted sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Neumaier-compensated mean in the given order.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp, mut n) = (0.0f64, 0.0f64, 0usize);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        n += 1;
    }
    (sum + comp) / n as f64
}

pub fn forecast_curves(spec: &ModelSpec, x_start: &DVector<f64>, req: &ForecastRequest) -> Result<ForecastResult> {
    check_start(spec, x_start)?;
    req.validate()?;
    let ss = build_state_space(spec)?;
    let intercept = ss.intercept();
    let states = simulate_recorded(spec, x_start, &req.horizons, req.paths, req.seed, req.workers)?;
    let n = spec.n_maturities();
    let mut horizons = Vec::with_capacity(req.horizons.len());
    for (r, &h) in req.horizons.iter().enumerate() {
        let curves: Vec<DVector<f64>> = states[r].iter().map(|x| &intercept + &ss.h1 * x).collect();
        let mut mean_j = Vec::with_capacity(n);
        let mut pct = vec![Vec::with_capacity(n); req.percentiles.len()];
        for j in 0..n {
            mean_j.push(mean(curves.iter().map(|c| c[j])));
            let mut col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
            col.sort_by(f64::total_cmp);
            for (k, &p) in req.percentiles.iter().enumerate() {
                pct[k].push(percentile(&col, p));
            }
        }
        horizons.push(HorizonForecast {
            horizon: h,
            mean: mean_j,
            percentiles: pct,
            states: req
                .keep_states
                .then(|| states[r].iter().map(|x| x.iter().copied().collect()).collect()),
        });
    }
    Ok(ForecastResult {
        maturities: spec.maturities.clone(),
        levels: req.percentiles.clone(),
        horizons,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: YieldPanel,
    /// `T x d` latent states behind each row.
    pub states: DMatrix<f64>,
}

/// Weekdays from `start` (moved forward to a weekday if needed).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// A panel generated by the model: the initial state is drawn from the
/// stationary law, each row follows one exact transition, and yields carry
/// i.i.d. `N(0, sigma_eps^2)` noise.
///
/// `sigma_eps = 0` is accepted here and gives yields exactly affine in the
/// states.
pub fn simulate_panel(spec: &ModelSpec, days: usize, seed: u64, start: NaiveDate) -> Result<SimulatedPanel> {
    if spec.sigma_eps == 0.0 {
        ModelSpec { sigma_eps: 1.0, ..spec.clone() }.validate()?;
    } else {
        spec.validate()?;
    }
    if days == 0 {
        return Err(Error::invalid("at least one day is required"));
    }
    let ss = build_state_space(&ModelSpec { sigma_eps: 1.0, ..spec.clone() })?;
    let intercept = ss.intercept();
    let d = spec.dim();
    let n = spec.n_maturities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(d);
    for (i, f) in spec.factors.iter().enumerate() {
        // A transition over 60 mean-reversion times is the stationary law.
        x[i] = sample_transition(&f.params, f.kind, f.params.eta, 60.0 / f.params.kappa, &mut rng)?;
    }
    let mut yields = DMatrix::zeros(days, n);
    let mut states = DMatrix::zeros(days, d);
    let laws = spec
        .factors
        .iter()
        .map(|f| Transition::new(&f.params, f.kind, spec.dt))
        .collect::<Result<Vec<_>>>()?;
    for t in 0..days {
        for (i, law) in laws.iter().enumerate() {
            x[i] = law.sample(x[i], &mut rng);
        }
        let y = &intercept + &ss.h1 * &x;
        for j in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            yields[(t, j)] = y[j] + spec.sigma_eps * z;
        }
        states.set_row(t, &x.transpose());
    }
    let panel = YieldPanel::new(business_days(start, days), spec.maturities.clone(), yields)?;
    Ok(SimulatedPanel { panel, states })
}
