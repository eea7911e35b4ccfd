//! Closed-form global minimizer of the nonconvex w-subproblem
//!
//! `min x'Mx + (rho/2)||w||^2 + h'w  s.t.  (x+ + x-)'xi = 0`, `x = x+ - x-`.
//!
//! In the coordinates `z = G'w` the objective is separable and the constraint
//! becomes `||z1|| = ||z3||`, which leaves a one-dimensional problem in the
//! common radius.

use nalgebra::{DVector, DVectorViewMut};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::problem::{Problem, SplitPoint};
use crate::rng::Stream;
use crate::spectral::SpectralFactorization;

/// Relative size below which a block of `q` is treated as zero.
pub const DEGENERATE_BLOCK_TOL: f64 = 1e-14;

/// Direction used for `z1` (or `z3`) when its block of `q` vanishes and the
/// minimizer is only determined up to a sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", content = "seed", rename_all = "snake_case")]
pub enum TieBreakPolicy {
    /// First canonical basis vector.
    #[default]
    CanonicalE1,
    /// Same direction as the other block's minimizer.
    CopyPartner,
    /// Uniform unit vector drawn from the given seed.
    SeededRandom(u64),
}

impl TieBreakPolicy {
    fn direction(&self, n: usize, partner: Option<DVector<f64>>) -> DVector<f64> {
        match self {
            TieBreakPolicy::CanonicalE1 => canonical(n),
            TieBreakPolicy::CopyPartner => partner.unwrap_or_else(|| canonical(n)),
            TieBreakPolicy::SeededRandom(seed) => Stream::new(*seed, "tie_break").unit_vector(n),
        }
    }
}

fn canonical(n: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[0] = 1.0;
    e
}

/// `h = (lin; -lin; -gamma e) + lambda - rho y`.
pub fn build_h(p: &Problem, y: &SplitPoint, lambda: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    let n = p.n();
    check_len("y", n, y.n())?;
    check_len("lambda", 3 * n, lambda.len())?;
    let mut h = lambda - y.stacked() * rho;
    for i in 0..n {
        h[i] += p.lin()[i];
        h[n + i] -= p.lin()[i];
        h[2 * n + i] -= p.gamma();
    }
    Ok(h)
}

/// Value of the subproblem objective `x'Mx + (rho/2)||w||^2 + h'w`.
pub fn subproblem_objective(p: &Problem, h: &DVector<f64>, rho: f64, w: &SplitPoint) -> f64 {
    let x = w.x();
    x.dot(&(p.m() * &x)) + 0.5 * rho * w.stacked().norm_squared() + h.dot(w.stacked())
}

/// Minimizes the subproblem for a given linear term `h` and penalty `rho`.
pub fn solve_from_h(
    f: &SpectralFactorization,
    h: &DVector<f64>,
    rho: f64,
    tb: TieBreakPolicy,
) -> Result<SplitPoint> {
    let min_valid = f.min_valid_rho();
    if !(rho > min_valid) {
        return Err(Error::PenaltyTooSmall { rho, min_valid });
    }
    let n = f.n();
    let q = f.transform_q(h)?;
    let q_norm = q.norm();
    let zero = DEGENERATE_BLOCK_TOL * (1.0 + q_norm);

    let q1 = q.rows(0, n);
    let q3 = q.rows(2 * n, n);
    let (n1, n3) = (q1.norm(), q3.norm());
    let radius = (n1 + n3) / (2.0 * rho);

    let mut z = DVector::zeros(3 * n);
    let dir1 = (n1 > zero).then(|| -q1 / n1);
    let dir3 = (n3 > zero).then(|| -q3 / n3);
    if radius > 0.0 {
        let d1 = match &dir1 {
            Some(d) => d.clone(),
            None => tb.direction(n, dir3.clone()),
        };
        let d3 = match &dir3 {
            Some(d) => d.clone(),
            None => tb.direction(n, dir1.clone()),
        };
        set_scaled(z.rows_mut(0, n), &d1, radius);
        set_scaled(z.rows_mut(2 * n, n), &d3, radius);
    }
    let s = f.eigenvalues();
    for i in 0..n {
        z[n + i] = -q[n + i] / (rho + 4.0 * s[i]);
    }
    SplitPoint::from_stacked(f.apply_g(&z)?)
}

fn set_scaled(mut dst: DVectorViewMut<'_, f64>, dir: &DVector<f64>, r: f64) {
    for i in 0..dir.len() {
        dst[i] = r * dir[i];
    }
}

/// The w-update of the ADMM iteration.
pub fn solve_w_subproblem(
    f: &SpectralFactorization,
    p: &Problem,
    y: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    tb: TieBreakPolicy,
) -> Result<SplitPoint> {
    let h = build_h(p, y, lambda, rho)?;
    solve_from_h(f, &h, rho, tb)
}
