//! The convex y-update: projection onto `Z2 = {y+, y- >= 0, 0 <= zeta <= 1,
//! A(y+ - y-) >= b}` after a proximal step on `g(y+ - y-)`.
//!
//! The `zeta` block never interacts with `g` or the linear rows, so it is
//! always clamped in closed form. The sign blocks go through a dense
//! Goldfarb-Idnani QP when `g` or constraints are present.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::problem::{Problem, SplitPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverOptions {
    /// KKT residual target, relative to the scale of the QP data.
    pub tol: f64,
    /// Defaults to `10 * (3n + m)` when absent.
    pub max_iter: Option<usize>,
}

impl Default for InnerSolverOptions {
    fn default() -> Self {
        InnerSolverOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl InnerSolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidOptions(format!(
                "inner tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidOptions("inner max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// A y-update together with its scaled KKT residual.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub y: SplitPoint,
    pub residual: f64,
    pub iterations: usize,
}

/// Componentwise projection for the case with no `g` and no linear rows.
pub fn solve_y_box(p: &Problem, w: &SplitPoint, lambda: &DVector<f64>, rho: f64) -> Result<SplitPoint> {
    if !p.is_box_only() {
        return Err(Error::Unsupported(
            "box projection called on a problem with g or linear constraints".into(),
        ));
    }
    project_box(w, lambda, rho)
}

fn project_box(w: &SplitPoint, lambda: &DVector<f64>, rho: f64) -> Result<SplitPoint> {
    let n = w.n();
    check_len("lambda", 3 * n, lambda.len())?;
    let t = w.stacked() + lambda / rho;
    let mut y = DVector::zeros(3 * n);
    for i in 0..2 * n {
        y[i] = t[i].max(0.0);
    }
    for i in 2 * n..3 * n {
        y[i] = t[i].clamp(0.0, 1.0);
    }
    SplitPoint::from_stacked(y)
}

/// Minimizes `g(y+ - y-) + (rho/2)||y - w - lambda/rho||^2` over `Z2`.
pub fn solve_y_general(
    p: &Problem,
    w: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    opts: &InnerSolverOptions,
) -> Result<SplitPoint> {
    solve_y_general_report(p, w, lambda, rho, opts).map(|s| s.y)
}

pub fn solve_y_general_report(
    p: &Problem,
    w: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    opts: &InnerSolverOptions,
) -> Result<InnerSolution> {
    opts.validate()?;
    let n = p.n();
    check_len("w", n, w.n())?;
    check_len("lambda", 3 * n, lambda.len())?;
    if !(rho > 0.0) {
        return Err(Error::InvalidOptions(format!("penalty must be positive, got {rho}")));
    }
    // zeta block: clamp
    let boxed = project_box(w, lambda, rho)?;
    if p.g_quad().is_none() && p.constraints().is_none() {
        return Ok(InnerSolution {
            y: boxed,
            residual: 0.0,
            iterations: 0,
        });
    }

    let t = w.stacked() + lambda / rho;
    let nv = 2 * n;
    let mut q = DMatrix::<f64>::identity(nv, nv) * rho;
    let mut c = DVector::zeros(nv);
    for i in 0..nv {
        c[i] = -rho * t[i];
    }
    if let Some(g) = p.g_quad() {
        for i in 0..n {
            for j in 0..n {
                let v = g.p[(i, j)];
                q[(i, j)] += v;
                q[(n + i, n + j)] += v;
                q[(i, n + j)] -= v;
                q[(n + i, j)] -= v;
            }
            c[i] += g.c[i];
            c[n + i] -= g.c[i];
        }
    }

    // rows of A_le y <= b_le: sign bounds then -A(y+ - y-) <= -b
    let m = p.constraints().map_or(0, |k| k.rows());
    let rows = nv + m;
    let mut a_le = DMatrix::zeros(rows, nv);
    let mut b_le = DVector::zeros(rows);
    for i in 0..nv {
        a_le[(i, i)] = -1.0;
    }
    if let Some(k) = p.constraints() {
        for r in 0..m {
            for j in 0..n {
                a_le[(nv + r, j)] = -k.a[(r, j)];
                a_le[(nv + r, n + j)] = k.a[(r, j)];
            }
            b_le[nv + r] = -k.b[r];
        }
    }

    let mut q_rows: Vec<f64> = q.transpose().iter().copied().collect();
    let a_rows: Vec<f64> = a_le.transpose().iter().copied().collect();
    let sol = quadprog::solve_qp(&mut q_rows, c.as_slice(), &a_rows, b_le.as_slice(), 0, false)
        .map_err(|e| match e {
            quadprog::Error::Infeasible => Error::Infeasible {
                violation: f64::INFINITY,
                tol: opts.tol,
            },
            other => Error::InnerSolver {
                residual: f64::INFINITY,
                tol: opts.tol,
                reason: format!("{other:?}"),
            },
        })?;

    let max_iter = opts.max_iter.unwrap_or(10 * (3 * n + m));
    let yv = DVector::from_vec(sol.sol);
    let mult = DVector::from_vec(sol.lagr);
    let scale = 1.0 + (&c).amax() + rho * yv.amax();
    let residual = qp_kkt_residual(&q, &c, &a_le, &b_le, &yv, &mult) / scale;
    if sol.iter > max_iter || residual > opts.tol {
        return Err(Error::InnerSolver {
            residual,
            tol: opts.tol,
            reason: if sol.iter > max_iter {
                format!("{} active-set iterations exceed limit {max_iter}", sol.iter)
            } else {
                "KKT residual above target".into()
            },
        });
    }

    let mut y = boxed.into_stacked();
    for i in 0..nv {
        // the QP may return -0.0 or tiny negatives within tolerance
        y[i] = yv[i].max(0.0);
    }
    Ok(InnerSolution {
        y: SplitPoint::from_stacked(y)?,
        residual,
        iterations: sol.iter,
    })
}

/// Max of stationarity, primal and dual feasibility and complementarity for
/// `min 0.5 y'Qy + c'y  s.t.  A y <= b` with multipliers `mu`.
fn qp_kkt_residual(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let stat = (q * y + c + a.tr_mul(mu)).amax();
    let slack = b - a * y;
    let mut r = stat;
    for i in 0..b.len() {
        r = r
            .max(-slack[i])
            .max(-mu[i])
            .max((mu[i] * slack[i]).abs());
    }
    r
}

/// Dispatches to the closed-form projection when the problem allows it.
pub fn solve_y(
    p: &Problem,
    w: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    opts: &InnerSolverOptions,
) -> Result<InnerSolution> {
    if p.is_box_only() {
        Ok(InnerSolution {
            y: project_box(w, lambda, rho)?,
            residual: 0.0,
            iterations: 0,
        })
    } else {
        solve_y_general_report(p, w, lambda, rho, opts)
    }
}

/// The y-update of the perturbed scheme: the general update with the dual
/// scaled by `1 - rho*alpha`.
pub fn solve_y_perturbed(
    p: &Problem,
    w: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    alpha: f64,
    opts: &InnerSolverOptions,
) -> Result<SplitPoint> {
    let shrink = 1.0 - rho * alpha;
    if !(alpha >= 0.0 && shrink > 0.0) {
        return Err(Error::InvalidOptions(format!(
            "perturbation needs 0 <= rho*alpha < 1, got rho = {rho}, alpha = {alpha}"
        )));
    }
    solve_y_general(p, w, &(lambda * shrink), rho, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn plain(n: usize) -> Problem {
        Problem::new(DMatrix::identity(n, n), DVector::zeros(n), 1.0).unwrap()
    }

    #[test]
    fn box_fixed_point() {
        let w = SplitPoint::split(&dvector![1.0, -2.0, 0.0]);
        let y = solve_y_box(&plain(3), &w, &DVector::zeros(9), 2.0).unwrap();
        assert_eq!(y, w);
    }

    #[test]
    fn box_clamps() {
        let w = SplitPoint::new(dvector![-1.0], dvector![0.0], dvector![0.4]).unwrap();
        let y = solve_y_box(&plain(1), &w, &DVector::zeros(3), 1.0).unwrap();
        assert_eq!(y.x_plus()[0], 0.0);
        let rho = 2.0;
        let y = solve_y_box(&plain(1), &w, &dvector![0.0, 0.0, rho * 1.2], rho).unwrap();
        assert_eq!(y.xi()[0], 1.0);
    }

    #[test]
    fn box_rejects_constrained_problem() {
        let p = plain(1).with_constraints(dmatrix![1.0], dvector![0.0]).unwrap();
        assert!(solve_y_box(&p, &SplitPoint::zeros(1), &DVector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn general_matches_box_without_constraints() {
        let p = plain(2);
        let w = SplitPoint::new(dvector![0.3, -0.1], dvector![1.0, 0.2], dvector![1.4, -0.3]).unwrap();
        let lambda = dvector![0.1, 0.2, -0.3, 0.4, -2.0, 0.6];
        let a = solve_y_box(&p, &w, &lambda, 1.5).unwrap();
        let b = solve_y_general(&p, &w, &lambda, 1.5, &InnerSolverOptions::default()).unwrap();
        assert!((a.stacked() - b.stacked()).amax() <= 1e-9);
    }

    #[test]
    fn halfspace_example() {
        let p = plain(1).with_constraints(dmatrix![1.0], dvector![2.0]).unwrap();
        let w = SplitPoint::split(&dvector![0.0]);
        let y = solve_y_general(&p, &w, &DVector::zeros(3), 1.0, &InnerSolverOptions::default()).unwrap();
        assert!((y.stacked() - dvector![2.0, 0.0, 1.0]).amax() < 1e-12);
    }

    #[test]
    fn perturbed_reduces_to_general() {
        let p = plain(2).with_constraints(dmatrix![1.0, 1.0], dvector![0.5]).unwrap();
        let w = SplitPoint::new(dvector![0.3, -0.1], dvector![1.0, 0.2], dvector![0.4, 0.3]).unwrap();
        let lambda = dvector![0.1, 0.2, -0.3, 0.4, -2.0, 0.6];
        let opts = InnerSolverOptions::default();
        assert_eq!(
            solve_y_perturbed(&p, &w, &lambda, 2.0, 0.0, &opts).unwrap(),
            solve_y_general(&p, &w, &lambda, 2.0, &opts).unwrap()
        );
        // rho*alpha close to one leaves a plain projection of w
        let near = solve_y_perturbed(&plain(2), &w, &(lambda.clone() * 1e6), 2.0, 0.5 - 1e-16, &opts).unwrap();
        let proj = solve_y_box(&plain(2), &w, &DVector::zeros(6), 2.0).unwrap();
        assert!((near.stacked() - proj.stacked()).amax() < 1e-8);
        let scaled = solve_y_general(&p, &w, &(&lambda * 0.4), 2.0, &opts).unwrap();
        let pert = solve_y_perturbed(&p, &w, &lambda, 2.0, 0.3, &opts).unwrap();
        assert!((scaled.stacked() - pert.stacked()).amax() <= 1e-10);
        assert!(solve_y_perturbed(&p, &w, &lambda, 2.0, 0.5, &opts).is_err());
    }

    #[test]
    fn infeasible_rows_reported() {
        let p = plain(1)
            .with_constraints(dmatrix![1.0; -1.0], dvector![1.0, 0.0])
            .unwrap();
        let err = solve_y_general(&p, &SplitPoint::zeros(1), &DVector::zeros(3), 1.0, &InnerSolverOptions::default());
        assert!(matches!(err, Err(Error::Infeasible { .. })));
    }

    /// Solves the sign-block QP by enumerating active sets of
    /// `{y+ >= 0, y- >= 0, A(y+ - y-) >= b}` and keeping the best feasible
    /// stationary point.
    fn enumeration_oracle(p: &Problem, w: &SplitPoint, lambda: &DVector<f64>, rho: f64) -> DVector<f64> {
        let n = p.n();
        let nv = 2 * n;
        let t = w.stacked() + lambda / rho;
        let mut q = DMatrix::<f64>::identity(nv, nv) * rho;
        let mut c = -t.rows(0, nv) * rho;
        if let Some(g) = p.g_quad() {
            let d = DMatrix::from_fn(nv, n, |i, j| {
                let s = if i < n { 1.0 } else { -1.0 };
                s * if i % n == j { 1.0 } else { 0.0 }
            });
            q += &d * &g.p * d.transpose();
            c += &d * &g.c;
        }
        let mut rows: Vec<(DVector<f64>, f64)> = (0..nv)
            .map(|i| {
                let mut r = DVector::zeros(nv);
                r[i] = 1.0;
                (r, 0.0)
            })
            .collect();
        if let Some(k) = p.constraints() {
            for r in 0..k.rows() {
                let mut row = DVector::zeros(nv);
                for j in 0..n {
                    row[j] = k.a[(r, j)];
                    row[n + j] = -k.a[(r, j)];
                }
                rows.push((row, k.b[r]));
            }
        }
        let obj = |y: &DVector<f64>| 0.5 * y.dot(&(&q * y)) + c.dot(y);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << rows.len()) {
            let active: Vec<usize> = (0..rows.len()).filter(|i| mask >> i & 1 == 1).collect();
            let k = active.len();
            let mut kkt = DMatrix::zeros(nv + k, nv + k);
            let mut rhs = DVector::zeros(nv + k);
            kkt.view_mut((0, 0), (nv, nv)).copy_from(&q);
            for i in 0..nv {
                rhs[i] = -c[i];
            }
            for (a, &ri) in active.iter().enumerate() {
                for j in 0..nv {
                    kkt[(j, nv + a)] = rows[ri].0[j];
                    kkt[(nv + a, j)] = rows[ri].0[j];
                }
                rhs[nv + a] = rows[ri].1;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let y = sol.rows(0, nv).clone_owned();
            if rows.iter().any(|(r, b)| r.dot(&y) < b - 1e-9) {
                continue;
            }
            let v = obj(&y);
            if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                best = Some((v, y));
            }
        }
        best.unwrap().1
    }

    fn constrained_instance() -> impl Strategy<Value = (Problem, SplitPoint, DVector<f64>, f64)> {
        (1usize..=4, 0usize..=3, any::<bool>()).prop_flat_map(|(n, m, with_g)| {
            (
                proptest::collection::vec(-2.0f64..2.0, m * n),
                proptest::collection::vec(-1.0f64..1.0, m),
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-1.0f64..1.0, n),
                proptest::collection::vec(-2.0f64..2.0, 3 * n),
                proptest::collection::vec(-2.0f64..2.0, 3 * n),
                0.2f64..4.0,
            )
                .prop_map(move |(a, b, pv, cv, wv, lv, rho)| {
                    // rows pass through a known feasible point so the QP is feasible
                    let a = DMatrix::from_row_slice(m, n, &a);
                    let x0 = DVector::from_fn(n, |i, _| 0.5 - 0.3 * i as f64);
                    let slack = DVector::from_vec(b).map(|v| v.abs());
                    let b = &a * &x0 - slack;
                    let mut p = plain(n);
                    if m > 0 {
                        p = p.with_constraints(a, b).unwrap();
                    }
                    if with_g {
                        let r = DMatrix::from_vec(n, n, pv);
                        p = p.with_g_quad(&r * r.transpose(), DVector::from_vec(cv)).unwrap();
                    }
                    (p, SplitPoint::from_stacked(DVector::from_vec(wv)).unwrap(), DVector::from_vec(lv), rho)
                })
        })
    }

    fn random_z2_point(p: &Problem, seed: u64) -> Option<SplitPoint> {
        let n = p.n();
        let mut s = crate::rng::Stream::new(seed, "z2");
        for _ in 0..200 {
            let v = DVector::from_fn(3 * n, |i, _| {
                if i < 2 * n { 3.0 * s.uniform() } else { s.uniform() }
            });
            let y = SplitPoint::from_stacked(v).unwrap();
            if p.row_violations(&y.x()).iter().all(|&r| r <= 0.0) {
                return Some(y);
            }
        }
        None
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn general_matches_enumeration((p, w, lambda, rho) in constrained_instance()) {
            let y = solve_y_general(&p, &w, &lambda, rho, &InnerSolverOptions::default()).unwrap();
            let oracle = enumeration_oracle(&p, &w, &lambda, rho);
            let n = p.n();
            prop_assert!((y.stacked().rows(0, 2 * n) - &oracle).amax() <= 1e-7);
            prop_assert!(crate::problem::check_feasibility_z2(&y, &p, 1e-10).is_feasible());
        }

        #[test]
        fn variational_inequality((p, w, lambda, rho) in constrained_instance(), seed in any::<u64>()) {
            let opts = InnerSolverOptions::default();
            let y = solve_y_general(&p, &w, &lambda, rho, &opts).unwrap();
            let n = p.n();
            let gx = p.grad_g(&y.x());
            let mut grad = (y.stacked() - w.stacked()) * rho - &lambda;
            for i in 0..n {
                grad[i] += gx[i];
                grad[n + i] -= gx[i];
            }
            for k in 0..20u64 {
                if let Some(other) = random_z2_point(&p, seed.wrapping_add(k)) {
                    let d = other.stacked() - y.stacked();
                    prop_assert!(grad.dot(&d) >= -10.0 * opts.tol * (1.0 + grad.norm() * d.norm()));
                }
            }
        }

        #[test]
        fn box_projection_is_nonexpansive(
            a in proptest::collection::vec(-3.0f64..3.0, 9),
            b in proptest::collection::vec(-3.0f64..3.0, 9),
            l in proptest::collection::vec(-3.0f64..3.0, 9),
            rho in 0.1f64..10.0,
        ) {
            let p = plain(3);
            let wa = SplitPoint::from_stacked(DVector::from_vec(a)).unwrap();
            let wb = SplitPoint::from_stacked(DVector::from_vec(b)).unwrap();
            let lambda = DVector::from_vec(l);
            let ya = solve_y_box(&p, &wa, &lambda, rho).unwrap();
            let yb = solve_y_box(&p, &wb, &lambda, rho).unwrap();
            prop_assert!((ya.stacked() - yb.stacked()).norm() <= (wa.stacked() - wb.stacked()).norm() + 1e-12);
        }
    }
}
