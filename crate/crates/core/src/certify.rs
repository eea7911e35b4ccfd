//! First- and second-order certificates for the complementarity program.
//!
//! The stationarity system, with multipliers `mu` (complementarity),
//! `beta1..beta4` (sign and box bounds) and `pi` (linear rows), reads
//!
//! ```text
//! (grad f; -grad f; -gamma e) + mu (xi; xi; x+ + x-)
//!     + (-beta1 - A'pi; -beta2 + A'pi; beta4 - beta3) = 0
//! ```
//!
//! ADMM iterates come in pairs `(w, y)` that only agree in the limit, so the
//! run certificate evaluates the `mu` part at `w` and the bound multipliers at
//! `y`, exactly as both subproblem optimality conditions provide them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{SolveTrace, Variant};
use crate::error::{check_len, Error, Result};
use crate::problem::{check_feasibility_z1, check_feasibility_z2, is_nondegenerate, Problem, SplitPoint};

/// Distance to a bound under which a constraint counts as active.
pub const ACT_TOL: f64 = 1e-6;

/// Relative singular-value cutoff for the tangent-space basis.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub mu: f64,
    pub beta1: DVector<f64>,
    pub beta2: DVector<f64>,
    pub beta3: DVector<f64>,
    pub beta4: DVector<f64>,
    pub pi: DVector<f64>,
    /// Residual left by the least-squares fits.
    pub fit_residual: f64,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Multipliers {
            mu: 0.0,
            beta1: DVector::zeros(n),
            beta2: DVector::zeros(n),
            beta3: DVector::zeros(n),
            beta4: DVector::zeros(n),
            pi: DVector::zeros(m),
            fit_residual: 0.0,
        }
    }

    /// `(-beta1 - A'pi; -beta2 + A'pi; beta4 - beta3)`.
    fn bound_terms(&self, p: &Problem) -> DVector<f64> {
        let n = self.beta1.len();
        let a_pi = match p.constraints() {
            Some(k) => k.a.tr_mul(&self.pi),
            None => DVector::zeros(n),
        };
        let mut v = DVector::zeros(3 * n);
        for i in 0..n {
            v[i] = -self.beta1[i] - a_pi[i];
            v[n + i] = -self.beta2[i] + a_pi[i];
            v[2 * n + i] = self.beta4[i] - self.beta3[i];
        }
        v
    }

    fn min_sign(&self) -> f64 {
        [&self.beta1, &self.beta2, &self.beta3, &self.beta4, &self.pi]
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &x| acc.min(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity_res: f64,
    pub complementarity_res: f64,
    pub feasibility_res: f64,
    pub nondegenerate: bool,
    /// Smallest eigenvalue of the Hessian on the tangent subspace, `None` when
    /// not requested and `+inf` (serialized as null) when the subspace is
    /// trivial.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub second_order_min_eig: Option<f64>,
    /// `||w - y - alpha lambda||`, present for pair certificates.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feasibility_gap: Option<f64>,
}

impl KktReport {
    /// Largest of the three first-order residuals.
    pub fn max_residual(&self) -> f64 {
        self.stationarity_res
            .max(self.complementarity_res)
            .max(self.feasibility_res)
    }
}

/// Final residual used to stop the run: `max(||w - y||, rho ||dy||)` for the
/// closed-form scheme and `max(||w - y||, ||rho dy + mu dw||)` for the
/// perturbed one.
pub fn kkt_residual_admm(trace: &SolveTrace) -> Result<f64> {
    if trace.records.len() < 2 {
        return Err(Error::TraceTooShort(format!(
            "{} iteration(s), need at least 2",
            trace.records.len()
        )));
    }
    let (cur, prev) = (&trace.final_state, &trace.previous_state);
    let primal = (cur.w.stacked() - cur.y.stacked()).norm();
    let last = trace.records.last().unwrap();
    let dy = cur.y.stacked() - prev.y.stacked();
    let dual = match trace.variant {
        Variant::AdmmCf => last.rho * dy.norm(),
        Variant::Perturbed => {
            let dw = cur.w.stacked() - prev.w.stacked();
            (dy * last.rho + dw * last.prox_weight.unwrap_or(0.0)).norm()
        }
    };
    Ok(primal.max(dual))
}

/// Lawson-Hanson nonnegative least squares `min ||Ax - b||, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let scale = a.amax().max(1e-300) * (1.0 + b.amax());
    let tol = 1e-13 * scale * (a.nrows().max(n) as f64);
    let mut passive = vec![false; n];
    let mut grad = a.tr_mul(&(b - a * &x));

    for _ in 0..3 * n + 10 {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        for _ in 0..3 * n + 10 {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(idx.iter());
            let z_sub = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-14 * sub.amax().max(1e-300))
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            let mut z = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = z_sub[k];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut step = 1.0f64;
            for &i in &idx {
                if z[i] <= 0.0 {
                    step = step.min(x[i] / (x[i] - z[i]));
                }
            }
            for i in 0..n {
                x[i] += step * (z[i] - x[i]);
            }
            for &i in &idx {
                if x[i] <= tol.min(1e-15) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
        grad = a.tr_mul(&(b - a * &x));
    }
    x
}

/// Bounds of `Z2` that are within [`ACT_TOL`] of holding with equality at `y`.
struct ActiveBounds {
    plus: Vec<usize>,
    minus: Vec<usize>,
    xi_lower: Vec<usize>,
    xi_upper: Vec<usize>,
    rows: Vec<usize>,
}

impl ActiveBounds {
    fn at(p: &Problem, y: &SplitPoint) -> Self {
        let n = y.n();
        let filter = |f: &dyn Fn(usize) -> bool| (0..n).filter(|&i| f(i)).collect::<Vec<_>>();
        let rows = p
            .row_violations(&y.x())
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= -ACT_TOL)
            .map(|(j, _)| j)
            .collect();
        ActiveBounds {
            plus: filter(&|i| y.x_plus()[i] <= ACT_TOL),
            minus: filter(&|i| y.x_minus()[i] <= ACT_TOL),
            xi_lower: filter(&|i| y.xi()[i] <= ACT_TOL),
            xi_upper: filter(&|i| y.xi()[i] >= 1.0 - ACT_TOL),
            rows,
        }
    }
}

/// `(grad f_Q(x); -grad f_Q(x); -gamma e)` at `w`.
fn h_gradient(p: &Problem, w: &SplitPoint) -> DVector<f64> {
    let n = p.n();
    let g = p.grad_f_quadratic(&w.x());
    let mut v = DVector::zeros(3 * n);
    for i in 0..n {
        v[i] = g[i];
        v[n + i] = -g[i];
        v[2 * n + i] = -p.gamma();
    }
    v
}

/// `(grad g(x); -grad g(x); 0)` at `y`.
fn p_gradient(p: &Problem, y: &SplitPoint) -> DVector<f64> {
    let n = p.n();
    let g = p.grad_g(&y.x());
    let mut v = DVector::zeros(3 * n);
    for i in 0..n {
        v[i] = g[i];
        v[n + i] = -g[i];
    }
    v
}

/// Multipliers from the two subproblem optimality conditions: `mu` by a
/// least-squares fit of `grad h(w) + lambda` onto `(xi; xi; x+ + x-)`, the
/// bound multipliers by nonnegative least squares of
/// `lambda - grad p(y)` on the constraints active at `y`.
pub fn recover_multipliers(p: &Problem, w: &SplitPoint, y: &SplitPoint, lambda: &DVector<f64>) -> Result<Multipliers> {
    let n = p.n();
    check_len("w", n, w.n())?;
    check_len("y", n, y.n())?;
    check_len("lambda", 3 * n, lambda.len())?;
    let m = p.constraints().map_or(0, |k| k.rows());
    let mut mult = Multipliers::zeros(n, m);

    let s = h_gradient(p, w) + lambda;
    let c = w.complementarity_gradient();
    let c2 = c.norm_squared();
    if c2.sqrt() > 1e-12 * (1.0 + w.stacked().norm()) {
        mult.mu = -s.dot(&c) / c2;
    }
    let w_res = (&s + &c * mult.mu).norm();

    let active = ActiveBounds::at(p, y);
    let target = lambda - p_gradient(p, y);
    let cols = active.plus.len() + active.minus.len() + active.xi_lower.len() + active.xi_upper.len() + active.rows.len();
    let mut a = DMatrix::zeros(3 * n, cols);
    let mut col = 0;
    for &i in &active.plus {
        a[(i, col)] = -1.0;
        col += 1;
    }
    for &i in &active.minus {
        a[(n + i, col)] = -1.0;
        col += 1;
    }
    for &i in &active.xi_lower {
        a[(2 * n + i, col)] = -1.0;
        col += 1;
    }
    for &i in &active.xi_upper {
        a[(2 * n + i, col)] = 1.0;
        col += 1;
    }
    if let Some(k) = p.constraints() {
        for &j in &active.rows {
            for i in 0..n {
                a[(i, col)] = -k.a[(j, i)];
                a[(n + i, col)] = k.a[(j, i)];
            }
            col += 1;
        }
    }
    let v = nnls(&a, &target);
    let mut col = 0;
    for (list, dst) in [
        (&active.plus, &mut mult.beta1),
        (&active.minus, &mut mult.beta2),
        (&active.xi_lower, &mut mult.beta3),
        (&active.xi_upper, &mut mult.beta4),
    ] {
        for &i in list {
            dst[i] = v[col];
            col += 1;
        }
    }
    for &j in &active.rows {
        mult.pi[j] = v[col];
        col += 1;
    }
    let y_res = (&a * &v - &target).norm();
    mult.fit_residual = w_res + y_res;
    Ok(mult)
}

fn complementarity_pairs(p: &Problem, point: &SplitPoint, mult: &Multipliers) -> f64 {
    let n = point.n();
    let mut r = 0.0f64;
    for i in 0..n {
        r = r
            .max((mult.beta1[i] * point.x_plus()[i]).abs())
            .max((mult.beta2[i] * point.x_minus()[i]).abs())
            .max((mult.beta3[i] * point.xi()[i]).abs())
            .max((mult.beta4[i] * (1.0 - point.xi()[i])).abs());
    }
    for (j, v) in p.row_violations(&point.x()).into_iter().enumerate() {
        r = r.max((mult.pi[j] * v).abs());
    }
    r.max(-mult.min_sign())
}

/// Residuals of the stationarity system, the complementarity pairs and
/// feasibility for `Z1` and `Z2`, all at the single point `w`.
pub fn first_order_kkt_residual(p: &Problem, w: &SplitPoint, mult: &Multipliers) -> Result<KktReport> {
    check_len("w", p.n(), w.n())?;
    let grad = p.smooth_gradient(&w.x());
    let n = p.n();
    let mut stat = mult.bound_terms(p) + w.complementarity_gradient() * mult.mu;
    for i in 0..n {
        stat[i] += grad[i];
        stat[n + i] -= grad[i];
        stat[2 * n + i] -= p.gamma();
    }
    Ok(KktReport {
        stationarity_res: stat.amax(),
        complementarity_res: complementarity_pairs(p, w, mult),
        feasibility_res: check_feasibility_z1(w, 0.0)
            .max_violation
            .max(check_feasibility_z2(w, p, 0.0).max_violation),
        nondegenerate: is_kkt_nondegenerate(w, ACT_TOL),
        second_order_min_eig: None,
        feasibility_gap: None,
    })
}

/// Stationarity with `grad f_Q` and `mu` at `w`, `grad g` and the bound
/// multipliers at `y`; complementarity pairs and `Z2` at `y`; `Z1` at `w`;
/// plus the gap `||w - y - alpha lambda||`.
pub fn perturbed_kkt_residual(
    p: &Problem,
    w: &SplitPoint,
    y: &SplitPoint,
    lambda: &DVector<f64>,
    alpha: f64,
) -> Result<(KktReport, Multipliers)> {
    let mult = recover_multipliers(p, w, y, lambda)?;
    let stat = h_gradient(p, w) + p_gradient(p, y) + w.complementarity_gradient() * mult.mu + mult.bound_terms(p);
    let gap = (w.stacked() - y.stacked() - lambda * alpha).norm();
    let report = KktReport {
        stationarity_res: stat.amax(),
        complementarity_res: complementarity_pairs(p, y, &mult),
        feasibility_res: check_feasibility_z1(w, 0.0)
            .max_violation
            .max(check_feasibility_z2(y, p, 0.0).max_violation),
        nondegenerate: is_kkt_nondegenerate(y, ACT_TOL),
        second_order_min_eig: None,
        feasibility_gap: Some(gap),
    };
    Ok((report, mult))
}

/// Same test as [`crate::problem::is_nondegenerate`].
pub fn is_kkt_nondegenerate(w: &SplitPoint, tol: f64) -> bool {
    is_nondegenerate(w, tol)
}

/// Smallest eigenvalue of the Lagrangian Hessian on the subspace orthogonal
/// to all active constraint gradients at `point`, or `+inf` when that
/// subspace is `{0}`.
pub fn projected_hessian_min_eig(p: &Problem, point: &SplitPoint, mu: f64) -> f64 {
    let n = p.n();
    let dim = 3 * n;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let unit = |k: usize| {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        e
    };
    for i in 0..n {
        if point.x_plus()[i] <= ACT_TOL {
            rows.push(unit(i));
        }
        if point.x_minus()[i] <= ACT_TOL {
            rows.push(unit(n + i));
        }
        if point.xi()[i] <= ACT_TOL || point.xi()[i] >= 1.0 - ACT_TOL {
            rows.push(unit(2 * n + i));
        }
    }
    if let Some(k) = p.constraints() {
        for (j, v) in p.row_violations(&point.x()).into_iter().enumerate() {
            if v >= -ACT_TOL {
                let mut r = DVector::zeros(dim);
                for i in 0..n {
                    r[i] = k.a[(j, i)];
                    r[n + i] = -k.a[(j, i)];
                }
                rows.push(r);
            }
        }
    }
    rows.push(point.complementarity_gradient());

    // pad to square so the SVD returns a full right basis
    let nrows = rows.len().max(dim);
    let mut jac = DMatrix::zeros(nrows, dim);
    for (r, row) in rows.iter().enumerate() {
        jac.set_row(r, &row.transpose());
    }
    let svd = jac.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let s_max = svd.singular_values.amax();
    let basis_idx: Vec<usize> = (0..dim)
        .filter(|&k| svd.singular_values[k] <= RANK_TOL * s_max)
        .collect();
    if basis_idx.is_empty() {
        return f64::INFINITY;
    }
    let basis = DMatrix::from_fn(dim, basis_idx.len(), |r, c| v_t[(basis_idx[c], r)]);

    let hf = p.smooth_hessian();
    let mut hess = DMatrix::zeros(dim, dim);
    hess.view_mut((0, 0), (n, n)).copy_from(&hf);
    hess.view_mut((n, n), (n, n)).copy_from(&hf);
    hess.view_mut((0, n), (n, n)).copy_from(&(-&hf));
    hess.view_mut((n, 0), (n, n)).copy_from(&(-&hf));
    for i in 0..n {
        hess[(i, 2 * n + i)] += mu;
        hess[(n + i, 2 * n + i)] += mu;
        hess[(2 * n + i, i)] += mu;
        hess[(2 * n + i, n + i)] += mu;
    }
    let reduced = basis.transpose() * hess * &basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    reduced.symmetric_eigenvalues().min()
}

/// Second-order test at a single point after checking that it is a
/// nondegenerate first-order point within `tol`.
pub fn second_order_check(p: &Problem, w: &SplitPoint, mult: &Multipliers, tol: f64) -> Result<f64> {
    let first = first_order_kkt_residual(p, w, mult)?;
    if first.max_residual() > tol || !first.nondegenerate {
        return Err(Error::Numerical(format!(
            "second-order test needs a nondegenerate first-order point (residual {:e}, nondegenerate {})",
            first.max_residual(),
            first.nondegenerate
        )));
    }
    Ok(projected_hessian_min_eig(p, w, mult.mu))
}

/// Certificate of the final iterate pair of a run. For the closed-form scheme
/// the pair gap `||w - y||` counts as infeasibility; for the perturbed scheme
/// it is reported separately against `alpha lambda`.
pub fn certify_run(p: &Problem, trace: &SolveTrace, second_order: bool) -> Result<(KktReport, Multipliers)> {
    let st = &trace.final_state;
    let alpha = match trace.variant {
        Variant::AdmmCf => 0.0,
        Variant::Perturbed => trace.records.last().and_then(|r| r.alpha).unwrap_or(0.0),
    };
    let (mut report, mult) = perturbed_kkt_residual(p, &st.w, &st.y, &st.lambda, alpha)?;
    if trace.variant == Variant::AdmmCf {
        report.feasibility_res = report.feasibility_res.max(report.feasibility_gap.unwrap_or(0.0));
    }
    if second_order {
        report.second_order_min_eig = Some(projected_hessian_min_eig(p, &st.y, mult.mu));
    }
    Ok((report, mult))
}
