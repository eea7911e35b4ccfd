//! The l0-penalized program, its complementarity reformulation and the maps
//! between `x`-space and split space `w = (x+; x-; xi)`.
//!
//! The smooth part is `f(x) = x'Mx + lin'x + g(x)` with no one-half factor on
//! the `M` term, and an optional convex quadratic `g(x) = 0.5 x'Px + c'x`.
//! The feasible region is `Ax >= b` when constraints are present.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Magnitude below which an entry of `x` counts as zero in `||x||_0`.
pub const ZERO_TOL: f64 = 1e-9;

/// Relative symmetry tolerance accepted for `M` and `P`.
const SYMMETRY_TOL: f64 = 1e-12;

/// `g(x) = 0.5 x'Px + c'x` with `P` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexQuadratic {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl ConvexQuadratic {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.c.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.c
    }
}

/// Rows of `Ax >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearConstraints {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    m: DMatrix<f64>,
    lin: DVector<f64>,
    gamma: f64,
    g_quad: Option<ConvexQuadratic>,
    constraints: Option<LinearConstraints>,
    offset: f64,
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn symmetrized(name: &str, m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidProblem(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem(format!("{name} has non-finite entries")));
    }
    let asym = frobenius(&(&m - m.transpose()));
    if asym > SYMMETRY_TOL * (1.0 + frobenius(&m)) {
        return Err(Error::InvalidProblem(format!(
            "{name} is not symmetric (||{name} - {name}'||_F = {asym:e})"
        )));
    }
    let t = m.transpose();
    Ok((m + t) * 0.5)
}

impl Problem {
    pub fn new(m: DMatrix<f64>, lin: DVector<f64>, gamma: f64) -> Result<Self> {
        let m = symmetrized("M", m)?;
        check_len("lin", m.nrows(), lin.len())?;
        if m.nrows() == 0 {
            return Err(Error::InvalidProblem("dimension n must be positive".into()));
        }
        if lin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("lin has non-finite entries".into()));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "gamma must be a finite nonnegative number, got {gamma}"
            )));
        }
        Ok(Problem {
            m,
            lin,
            gamma,
            g_quad: None,
            constraints: None,
            offset: 0.0,
        })
    }

    /// `||C x - obs||^2 + gamma ||x||_0` as `M = C'C`, `lin = -2 C'obs` and
    /// the constant `obs'obs` kept as the report offset.
    pub fn least_squares(c: &DMatrix<f64>, obs: &DVector<f64>, gamma: f64) -> Result<Self> {
        check_len("obs", c.nrows(), obs.len())?;
        let m = c.transpose() * c;
        let lin = c.transpose() * obs * -2.0;
        Ok(Problem::new(m, lin, gamma)?.with_offset(obs.dot(obs)))
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_g_quad(mut self, p: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let p = symmetrized("P", p)?;
        check_len("g_quad.P", self.n(), p.nrows())?;
        check_len("g_quad.c", self.n(), c.len())?;
        let min_eig = p.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * (1.0 + frobenius(&p)) {
            return Err(Error::InvalidProblem(format!(
                "g_quad.P must be positive semidefinite (smallest eigenvalue {min_eig:e})"
            )));
        }
        self.g_quad = Some(ConvexQuadratic { p, c });
        Ok(self)
    }

    pub fn with_constraints(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_len("A columns", self.n(), a.ncols())?;
        check_len("b", a.nrows(), b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("A or b has non-finite entries".into()));
        }
        self.constraints = Some(LinearConstraints { a, b });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.lin.len()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn g_quad(&self) -> Option<&ConvexQuadratic> {
        self.g_quad.as_ref()
    }

    pub fn constraints(&self) -> Option<&LinearConstraints> {
        self.constraints.as_ref()
    }

    /// Constant added to reported objectives (e.g. `obs'obs`).
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// True when `g == 0` and there are no linear rows, so the y-update is a
    /// plain box projection.
    pub fn is_box_only(&self) -> bool {
        self.g_quad.is_none() && self.constraints.is_none()
    }

    /// `f_Q(x) = x'Mx + lin'x`.
    pub fn f_quadratic(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.m * x)) + self.lin.dot(x)
    }

    pub fn grad_f_quadratic(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.m * x * 2.0 + &self.lin
    }

    /// `p(y) = g(y+ - y-)`, zero when no `g` is present.
    pub fn g_value(&self, x: &DVector<f64>) -> f64 {
        self.g_quad.as_ref().map_or(0.0, |g| g.value(x))
    }

    pub fn grad_g(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.g_quad {
            Some(g) => g.gradient(x),
            None => DVector::zeros(x.len()),
        }
    }

    /// `f(x) = f_Q(x) + g(x)`.
    pub fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        self.f_quadratic(x) + self.g_value(x)
    }

    pub fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grad_f_quadratic(x) + self.grad_g(x)
    }

    /// Hessian of `f`, i.e. `2M + P`.
    pub fn smooth_hessian(&self) -> DMatrix<f64> {
        let mut h = &self.m * 2.0;
        if let Some(g) = &self.g_quad {
            h += &g.p;
        }
        h
    }

    /// `f(x) + gamma ||x||_0`, excluding the report offset.
    pub fn eval_objective(&self, x: &DVector<f64>) -> Result<f64> {
        check_len("x", self.n(), x.len())?;
        Ok(self.smooth_value(x) + self.gamma * cardinality(x) as f64)
    }

    /// `f(x+ - x-) + gamma * sum(1 - xi)`.
    pub fn eval_relaxed_objective(&self, w: &SplitPoint) -> Result<f64> {
        check_len("split point", self.n(), w.n())?;
        let penalty: f64 = w.xi().iter().map(|v| 1.0 - v).sum();
        Ok(self.smooth_value(&w.x()) + self.gamma * penalty)
    }

    /// Violation of each row of `Ax >= b` at `x`, positive when violated.
    pub fn row_violations(&self, x: &DVector<f64>) -> Vec<f64> {
        match &self.constraints {
            Some(c) => {
                let ax = &c.a * x;
                (0..c.rows()).map(|j| c.b[j] - ax[j]).collect()
            }
            None => Vec::new(),
        }
    }
}

/// Number of entries with magnitude above [`ZERO_TOL`].
pub fn cardinality(x: &DVector<f64>) -> usize {
    x.iter().filter(|v| v.abs() > ZERO_TOL).count()
}

/// The MPCC variable `(x+; x-; xi)` stored as one stacked `3n` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPoint {
    data: DVector<f64>,
}

impl SplitPoint {
    pub fn new(x_plus: DVector<f64>, x_minus: DVector<f64>, xi: DVector<f64>) -> Result<Self> {
        let n = x_plus.len();
        check_len("x_minus", n, x_minus.len())?;
        check_len("xi", n, xi.len())?;
        let mut data = DVector::zeros(3 * n);
        data.rows_mut(0, n).copy_from(&x_plus);
        data.rows_mut(n, n).copy_from(&x_minus);
        data.rows_mut(2 * n, n).copy_from(&xi);
        Ok(SplitPoint { data })
    }

    pub fn from_stacked(data: DVector<f64>) -> Result<Self> {
        if data.len() % 3 != 0 {
            return Err(Error::DimensionMismatch {
                what: "stacked split point",
                expected: 3 * (data.len() / 3),
                got: data.len(),
            });
        }
        Ok(SplitPoint { data })
    }

    pub fn zeros(n: usize) -> Self {
        SplitPoint {
            data: DVector::zeros(3 * n),
        }
    }

    /// `(e; 0; 0)`, the default ADMM starting point.
    pub fn ones_start(n: usize) -> Self {
        let mut data = DVector::zeros(3 * n);
        data.rows_mut(0, n).fill(1.0);
        SplitPoint { data }
    }

    /// Sign split of `x` with `xi_i = 1` exactly where `x_i == 0`.
    pub fn split(x: &DVector<f64>) -> Self {
        let n = x.len();
        let mut data = DVector::zeros(3 * n);
        for (i, &v) in x.iter().enumerate() {
            data[i] = v.max(0.0);
            data[n + i] = (-v).max(0.0);
            data[2 * n + i] = if v == 0.0 { 1.0 } else { 0.0 };
        }
        SplitPoint { data }
    }

    pub fn n(&self) -> usize {
        self.data.len() / 3
    }

    pub fn x_plus(&self) -> DVectorView<'_, f64> {
        self.data.rows(0, self.n())
    }

    pub fn x_minus(&self) -> DVectorView<'_, f64> {
        self.data.rows(self.n(), self.n())
    }

    pub fn xi(&self) -> DVectorView<'_, f64> {
        self.data.rows(2 * self.n(), self.n())
    }

    /// `x+ - x-`.
    pub fn x(&self) -> DVector<f64> {
        self.x_plus() - self.x_minus()
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_stacked(self) -> DVector<f64> {
        self.data
    }

    /// `(x+ + x-)'xi`.
    pub fn complementarity(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| (self.data[i] + self.data[n + i]) * self.data[2 * n + i])
            .sum()
    }

    /// Gradient of the complementarity form, `(xi; xi; x+ + x-)`.
    pub fn complementarity_gradient(&self) -> DVector<f64> {
        let n = self.n();
        let mut g = DVector::zeros(3 * n);
        for i in 0..n {
            g[i] = self.data[2 * n + i];
            g[n + i] = self.data[2 * n + i];
            g[2 * n + i] = self.data[i] + self.data[n + i];
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ConstraintId {
    /// `(x+ + x-)'xi = 0`.
    Complementarity,
    XPlusNonneg(usize),
    XMinusNonneg(usize),
    XiLower(usize),
    XiUpper(usize),
    Row(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_violation: f64,
    pub violated_constraints: Vec<(ConstraintId, f64)>,
}

impl FeasibilityReport {
    fn from_candidates(candidates: impl IntoIterator<Item = (ConstraintId, f64)>, tol: f64) -> Self {
        let violated_constraints: Vec<_> =
            candidates.into_iter().filter(|&(_, v)| v > tol).collect();
        let max_violation = violated_constraints
            .iter()
            .map(|&(_, v)| v)
            .fold(0.0, f64::max);
        FeasibilityReport {
            max_violation,
            violated_constraints,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.violated_constraints.is_empty()
    }
}

/// Membership in `Z1 = {(x+ + x-)'xi = 0}`.
pub fn check_feasibility_z1(w: &SplitPoint, tol: f64) -> FeasibilityReport {
    FeasibilityReport::from_candidates(
        [(ConstraintId::Complementarity, w.complementarity().abs())],
        tol,
    )
}

/// Membership in `Z2`: sign bounds, `0 <= xi <= 1` and `A(y+ - y-) >= b`.
pub fn check_feasibility_z2(y: &SplitPoint, p: &Problem, tol: f64) -> FeasibilityReport {
    let n = y.n();
    let mut candidates = Vec::with_capacity(4 * n);
    for i in 0..n {
        candidates.push((ConstraintId::XPlusNonneg(i), -y.x_plus()[i]));
        candidates.push((ConstraintId::XMinusNonneg(i), -y.x_minus()[i]));
        candidates.push((ConstraintId::XiLower(i), -y.xi()[i]));
        candidates.push((ConstraintId::XiUpper(i), y.xi()[i] - 1.0));
    }
    for (j, v) in p.row_violations(&y.x()).into_iter().enumerate() {
        candidates.push((ConstraintId::Row(j), v));
    }
    FeasibilityReport::from_candidates(candidates, tol)
}

/// Every zero pair `x+_i = x-_i = 0` carries `xi_i = 1`.
pub fn is_nondegenerate(w: &SplitPoint, tol: f64) -> bool {
    (0..w.n()).all(|i| w.x_plus()[i] + w.x_minus()[i] > tol || w.xi()[i] >= 1.0 - tol)
}

/// Removes the common part of `x+` and `x-` so that they become
/// complementary, keeping `x+ - x-` and `xi` unchanged.
pub fn recover_tight(p: &Problem, w: &SplitPoint, tol: f64) -> Result<SplitPoint> {
    check_len("split point", p.n(), w.n())?;
    let z1 = check_feasibility_z1(w, tol);
    let z2 = check_feasibility_z2(w, p, tol);
    let violation = z1.max_violation.max(z2.max_violation);
    if !(z1.is_feasible() && z2.is_feasible()) {
        return Err(Error::Infeasible { violation, tol });
    }
    let n = w.n();
    let mut out = w.clone();
    for i in 0..n {
        let (a, b) = (w.x_plus()[i], w.x_minus()[i]);
        if a >= b {
            out.data[i] = a - b;
            out.data[n + i] = 0.0;
        } else {
            out.data[i] = 0.0;
            out.data[n + i] = b - a;
        }
    }
    Ok(out)
}
