//! Iterative hard thresholding: proximal gradient with the exact proximal
//! map of `gamma ||x||_0`, which zeroes entries with `|v| <= sqrt(2 gamma t)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{cardinality, Problem};
use crate::rng::Stream;

use super::oracle::support_minimizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhtOptions {
    /// Step length; `None` uses `0.99 / L`.
    pub step: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Number of starting points for the multi-start variant, the origin
    /// included.
    pub starts: usize,
}

impl Default for IhtOptions {
    fn default() -> Self {
        IhtOptions {
            step: None,
            max_iter: 100_000,
            tol: 1e-6,
            starts: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtResult {
    pub x: DVector<f64>,
    /// `f(x) + gamma ||x||_0`, offset excluded.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient Lipschitz constant `2 max|eig(M)| + max eig(P)`.
pub fn lipschitz_constant(p: &Problem) -> f64 {
    let m = p.m().clone().symmetric_eigenvalues().amax();
    let g = p
        .g_quad()
        .map_or(0.0, |g| g.p.clone().symmetric_eigenvalues().max().max(0.0));
    2.0 * m + g
}

fn resolve_step(p: &Problem, opts: &IhtOptions) -> Result<f64> {
    if p.constraints().is_some() {
        return Err(Error::Unsupported("hard thresholding does not handle linear rows".into()));
    }
    let step = match opts.step {
        Some(s) => s,
        None => {
            let l = lipschitz_constant(p);
            if l == 0.0 {
                1.0
            } else {
                0.99 / l
            }
        }
    };
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidOptions(format!("step must be positive, got {step}")));
    }
    Ok(step)
}

fn objective(p: &Problem, x: &DVector<f64>) -> f64 {
    p.smooth_value(x) + p.gamma() * cardinality(x) as f64
}

fn hard_threshold(v: &mut DVector<f64>, level: f64) {
    for e in v.iter_mut() {
        if e.abs() <= level {
            *e = 0.0;
        }
    }
}

/// Runs from `x0` until `||x_{k+1} - x_k|| < tol`. An objective increase
/// means the step is too long for the curvature and aborts the run.
pub fn iht(p: &Problem, x0: &DVector<f64>, opts: &IhtOptions) -> Result<IhtResult> {
    crate::error::check_len("x0", p.n(), x0.len())?;
    let step = resolve_step(p, opts)?;
    let level = (2.0 * p.gamma() * step).sqrt();
    let mut x = x0.clone();
    let mut value = objective(p, &x);
    for k in 1..=opts.max_iter {
        let mut next = &x - p.smooth_gradient(&x) * step;
        hard_threshold(&mut next, level);
        let next_value = objective(p, &next);
        if next_value > value + 1e-10 * (1.0 + value.abs()) {
            return Err(Error::StepTooLarge {
                before: value,
                after: next_value,
            });
        }
        let moved = (&next - &x).norm();
        x = next;
        value = next_value;
        if moved < opts.tol {
            return Ok(IhtResult {
                x,
                objective: value,
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(IhtResult {
        x,
        objective: value,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Best of runs from the origin and `starts - 1` standard normal points.
pub fn iht_multistart(p: &Problem, opts: &IhtOptions, seed: u64) -> Result<IhtResult> {
    let mut stream = Stream::new(seed, "iht/starts");
    let mut best = iht(p, &DVector::zeros(p.n()), opts)?;
    let mut total = best.iterations;
    for _ in 1..opts.starts {
        let x0 = stream.normal_vector(p.n());
        let r = iht(p, &x0, opts)?;
        total += r.iterations;
        if r.objective < best.objective {
            best = r;
        }
    }
    best.iterations = total;
    Ok(best)
}

/// Orthogonal matching pursuit: add the coordinate with the largest gradient
/// magnitude and re-minimize on the support, until a gradient step on any
/// new coordinate would be removed by the hard threshold.
pub fn orthogonal_matching_pursuit(p: &Problem, step: f64) -> Result<DVector<f64>> {
    let level = (2.0 * p.gamma() * step).sqrt();
    let mut support: Vec<usize> = Vec::new();
    let mut x = DVector::zeros(p.n());
    while support.len() < p.n() {
        let g = p.smooth_gradient(&x);
        let pick = (0..p.n())
            .filter(|i| !support.contains(i))
            .max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(b.cmp(&a)));
        let Some(j) = pick else { break };
        if step * g[j].abs() <= level {
            break;
        }
        support.push(j);
        support.sort_unstable();
        x = support_minimizer(p, &support)?;
    }
    Ok(x)
}

/// Plain thresholding started from the matching-pursuit point.
pub fn iht_warm_start(p: &Problem, opts: &IhtOptions) -> Result<IhtResult> {
    let step = resolve_step(p, opts)?;
    let x0 = orthogonal_matching_pursuit(p, step)?;
    iht(p, &x0, opts)
}
