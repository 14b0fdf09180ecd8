//! Limited-memory quasi-Newton minimization over a box, with the search
//! path projected onto the box and an Armijo backtracking line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop when `|projected gradient|_inf <= grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers `f` by less than `f_tol * max(1, |f|)`.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iterations: 500,
            memory: 10,
            grad_tol: 1e-9,
            f_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::FunctionTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after each accepted iterate, starting with the initial point.
    pub history: Vec<f64>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Components of `g` that can still move `x` inside the box; a variable at a
/// bound whose descent direction points outward is held.
pub fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let at_lo = x[i] <= lo[i];
            let at_hi = x[i] >= hi[i];
            if (at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over `[lo, hi]` from `x0` (projected first). `value`
/// returns `None` where the objective cannot be evaluated; `value_grad`
/// returns the value and gradient. The start must be evaluable.
pub fn minimize<V, G>(
    mut value: V,
    mut value_grad: G,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &LbfgsOptions,
) -> Result<Outcome, String>
where
    V: FnMut(&[f64]) -> Option<f64>,
    G: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = value_grad(&x).ok_or("objective undefined at the start point")?;
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let pg = projected_gradient(&x, &g, lo, hi);
        if inf_norm(&pg) <= opts.grad_tol * f.abs().max(1.0) {
            termination = Termination::GradientTolerance;
            break;
        }
        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();

        // Two-loop recursion on the free variables.
        let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (a - b) * s[i];
            }
        }
        for i in 0..n {
            if !free[i] {
                d[i] = 0.0;
            }
        }
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut step = if mem.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        // Backtracking along the projected path.
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            project(&mut trial, lo, hi);
            let moved: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
            if inf_norm(&moved) == 0.0 {
                break;
            }
            if let Some(ft) = value(&trial) {
                if ft <= f + 1e-4 * dot(&g, &moved) {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(trial) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let Some((f_new, g_new)) = value_grad(&trial) else {
            termination = Termination::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - f_new;
        x = trial;
        f = f_new;
        g = g_new;
        history.push(f);
        if decrease <= opts.f_tol * f.abs().max(1.0) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }
    Ok(Outcome {
        x,
        f,
        grad: g,
        iterations,
        termination,
        history,
    })
}
