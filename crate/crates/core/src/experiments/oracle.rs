//! Exhaustive global minimization over all supports.
//!
//! On a fixed support `S` the problem is the convex quadratic
//! `x_S' Q_SS x_S + l_S' x_S` with `Q = M + P/2` and `l = lin + c`, so the
//! global optimum is the best of `2^n` small solves. Two independent
//! enumerations are provided so they can check each other.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::Problem;

pub const DEFAULT_MAX_N: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    /// `f(x) + gamma ||x||_0`, offset excluded.
    pub objective: f64,
    pub support: Vec<usize>,
    /// Supports skipped because the linear rows could not be satisfied.
    pub infeasible_supports: usize,
}

struct Reduced {
    q: DMatrix<f64>,
    l: DVector<f64>,
}

fn reduced(p: &Problem) -> Reduced {
    let mut q = p.m().clone();
    let mut l = p.lin().clone();
    if let Some(g) = p.g_quad() {
        q += &g.p * 0.5;
        l += &g.c;
    }
    Reduced { q, l }
}

fn check_size(p: &Problem, max_n: usize) -> Result<()> {
    if p.n() > max_n {
        return Err(Error::Unsupported(format!(
            "exhaustive oracle limited to n <= {max_n}, got n = {}",
            p.n()
        )));
    }
    if max_n >= usize::BITS as usize {
        return Err(Error::InvalidOptions(format!("max_n {max_n} too large")));
    }
    Ok(())
}

fn unbounded() -> Error {
    Error::InvalidProblem("objective is unbounded below on some support".into())
}

/// `min x'Qx + l'x` over `R^|S|` by a least-norm spectral solve. Returns the
/// minimizer and value, or an error when unbounded below.
fn support_min_dense(r: &Reduced, support: &[usize]) -> Result<(DVector<f64>, f64)> {
    if support.is_empty() {
        return Ok((DVector::zeros(0), 0.0));
    }
    let q = r.q.select_rows(support.iter()).select_columns(support.iter());
    let l = DVector::from_iterator(support.len(), support.iter().map(|&i| r.l[i]));
    let eig = q.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let coeffs = eig.eigenvectors.tr_mul(&l);
    let mut z = DVector::zeros(support.len());
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s < -1e-12 * scale {
            return Err(unbounded());
        }
        if s <= 1e-12 * scale {
            if coeffs[k].abs() > 1e-9 * (1.0 + l.norm()) {
                return Err(unbounded());
            }
        } else {
            z[k] = -coeffs[k] / (2.0 * s);
        }
    }
    let x = &eig.eigenvectors * z;
    let value = x.dot(&(&q * &x)) + l.dot(&x);
    Ok((x, value))
}

/// Minimizer of the smooth part restricted to `support`, zero elsewhere.
pub(crate) fn support_minimizer(p: &Problem, support: &[usize]) -> Result<DVector<f64>> {
    let (x_s, _) = support_min_dense(&reduced(p), support)?;
    let mut x = DVector::zeros(p.n());
    for (k, &i) in support.iter().enumerate() {
        x[i] = x_s[k];
    }
    Ok(x)
}

/// Same minimization with the rows `A_S x_S >= b`; `None` when infeasible.
fn support_min_constrained(r: &Reduced, p: &Problem, support: &[usize]) -> Result<Option<(DVector<f64>, f64)>> {
    let k = p.constraints().expect("constrained path");
    if support.is_empty() {
        let ok = k.b.iter().all(|&bj| bj <= 1e-9);
        return Ok(ok.then(|| (DVector::zeros(0), 0.0)));
    }
    let s = support.len();
    let q = r.q.select_rows(support.iter()).select_columns(support.iter());
    let l: Vec<f64> = support.iter().map(|&i| r.l[i]).collect();
    let a = k.a.select_columns(support.iter());
    // quadprog: min 0.5 x'Hx + c'x s.t. Gx <= h, with H = 2Q and G = -A
    let mut h_rows: Vec<f64> = (0..s * s).map(|t| 2.0 * q[(t / s, t % s)]).collect();
    let g_rows: Vec<f64> = (0..a.nrows() * s).map(|t| -a[(t / s, t % s)]).collect();
    let h_rhs: Vec<f64> = k.b.iter().map(|v| -v).collect();
    match quadprog::solve_qp(&mut h_rows, &l, &g_rows, &h_rhs, 0, false) {
        Ok(sol) => {
            let x = DVector::from_vec(sol.sol);
            let value = x.dot(&(&q * &x)) + x.dot(&DVector::from_column_slice(&l));
            Ok(Some((x, value)))
        }
        Err(quadprog::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::Unsupported(format!(
            "support QP failed ({e:?}); the oracle needs a positive definite quadratic on every support when rows are present"
        ))),
    }
}

struct Best {
    value: f64,
    support: Vec<usize>,
    x_support: DVector<f64>,
    infeasible: usize,
}

impl Best {
    fn new() -> Self {
        Best {
            value: f64::INFINITY,
            support: Vec::new(),
            x_support: DVector::zeros(0),
            infeasible: 0,
        }
    }

    fn offer(&mut self, value: f64, support: &[usize], x: impl FnOnce() -> DVector<f64>) {
        if value < self.value {
            self.value = value;
            self.support = support.to_vec();
            self.x_support = x();
        }
    }

    fn finish(self, p: &Problem) -> Result<OracleSolution> {
        if !self.value.is_finite() {
            return Err(Error::Infeasible {
                violation: f64::INFINITY,
                tol: 0.0,
            });
        }
        let mut x = DVector::zeros(p.n());
        for (k, &i) in self.support.iter().enumerate() {
            x[i] = self.x_support[k];
        }
        Ok(OracleSolution {
            x,
            objective: self.value,
            support: self.support,
            infeasible_supports: self.infeasible,
        })
    }
}

/// Depth-first enumeration that grows a Cholesky factor of `Q_SS` one index
/// at a time. Supports whose factor breaks down fall back to a dense solve.
pub fn brute_force_global(p: &Problem, max_n: usize) -> Result<OracleSolution> {
    check_size(p, max_n)?;
    let r = reduced(p);
    let mut best = Best::new();
    if p.constraints().is_some() {
        enumerate_constrained(&r, p, &mut best)?;
        return best.finish(p);
    }
    let n = p.n();
    let gamma = p.gamma();
    let scale = r.q.amax().max(1.0);
    best.offer(0.0, &[], || DVector::zeros(0));
    let mut dfs = Dfs {
        r: &r,
        n,
        gamma,
        pivot_tol: 1e-10 * scale,
        support: Vec::with_capacity(n),
        chol: DMatrix::zeros(n, n),
        u: DVector::zeros(n),
        best: &mut best,
    };
    dfs.descend(0, 0.0, true)?;
    // the minimizer is recomputed densely so it does not carry factor drift
    let (x_s, value) = support_min_dense(&r, &best.support)?;
    best.x_support = x_s;
    best.value = value + gamma * best.support.len() as f64;
    best.finish(p)
}

struct Dfs<'a> {
    r: &'a Reduced,
    n: usize,
    gamma: f64,
    pivot_tol: f64,
    support: Vec<usize>,
    /// Lower Cholesky factor of `Q_SS` in the leading block.
    chol: DMatrix<f64>,
    /// `L^{-1} l_S`, so the support minimum is `-||u||^2 / 4`.
    u: DVector<f64>,
    best: &'a mut Best,
}

impl Dfs<'_> {
    /// Visits every superset of the current support using indices `>= from`.
    /// `norm2` is `||u||^2` for the current support when `factored` holds.
    fn descend(&mut self, from: usize, norm2: f64, factored: bool) -> Result<()> {
        for j in from..self.n {
            let k = self.support.len();
            let mut child_factored = false;
            let mut child_norm2 = 0.0;
            if factored {
                let mut dot = 0.0;
                for a in 0..k {
                    let mut v = self.r.q[(self.support[a], j)];
                    for b in 0..a {
                        v -= self.chol[(a, b)] * self.chol[(k, b)];
                    }
                    v /= self.chol[(a, a)];
                    self.chol[(k, a)] = v;
                    dot += v * v;
                }
                let d = self.r.q[(j, j)] - dot;
                if d > self.pivot_tol {
                    let piv = d.sqrt();
                    self.chol[(k, k)] = piv;
                    let mut t = self.r.l[j];
                    for a in 0..k {
                        t -= self.chol[(k, a)] * self.u[a];
                    }
                    self.u[k] = t / piv;
                    child_factored = true;
                    child_norm2 = norm2 + self.u[k] * self.u[k];
                }
            }
            self.support.push(j);
            let value = if child_factored {
                -0.25 * child_norm2
            } else {
                support_min_dense(self.r, &self.support)?.1
            };
            let total = value + self.gamma * self.support.len() as f64;
            self.best.offer(total, &self.support, || DVector::zeros(0));
            self.descend(j + 1, child_norm2, child_factored)?;
            self.support.pop();
        }
        Ok(())
    }
}

fn enumerate_constrained(r: &Reduced, p: &Problem, best: &mut Best) -> Result<()> {
    let n = p.n();
    for mask in 0u64..(1u64 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        match support_min_constrained(r, p, &support)? {
            Some((x, value)) => {
                let total = value + p.gamma() * support.len() as f64;
                best.offer(total, &support, || x);
            }
            None => best.infeasible += 1,
        }
    }
    Ok(())
}

/// Plain loop over bitmasks with an independent dense solve per support.
pub fn brute_force_global_bitmask(p: &Problem, max_n: usize) -> Result<OracleSolution> {
    check_size(p, max_n)?;
    let r = reduced(p);
    let mut best = Best::new();
    if p.constraints().is_some() {
        enumerate_constrained(&r, p, &mut best)?;
        return best.finish(p);
    }
    let n = p.n();
    for mask in 0u64..(1u64 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let (x, value) = support_min_dense(&r, &support)?;
        best.offer(value + p.gamma() * support.len() as f64, &support, || x);
    }
    best.finish(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::generator::{generate_lsr_instance, NoiseSpec};
    use crate::problem::cardinality;
    use crate::rng::Stream;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn hand_enumeration_three_coordinates() {
        let p = Problem::new(DMatrix::identity(3, 3), dvector![-2.0, -0.2, 0.0], 0.5).unwrap();
        for sol in [brute_force_global(&p, 16).unwrap(), brute_force_global_bitmask(&p, 16).unwrap()] {
            assert_eq!(sol.support, vec![0]);
            assert!((sol.objective - -0.5).abs() < 1e-12);
            assert!((sol.x - dvector![1.0, 0.0, 0.0]).amax() < 1e-12);
        }
    }

    #[test]
    fn huge_penalty_gives_zero() {
        let inst = generate_lsr_instance(20, 5, 3, 60.0, NoiseSpec::VarianceRatio, 2).unwrap();
        let p = inst.to_problem(1e12).unwrap();
        let sol = brute_force_global(&p, 16).unwrap();
        assert_eq!(cardinality(&sol.x), 0);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn zero_penalty_gives_dense_minimizer() {
        let inst = generate_lsr_instance(20, 5, 3, 60.0, NoiseSpec::VarianceRatio, 4).unwrap();
        let p = inst.to_problem(0.0).unwrap();
        let sol = brute_force_global(&p, 16).unwrap();
        let unconstrained = (p.m() * 2.0).lu().solve(&-p.lin()).unwrap();
        assert!((sol.x - unconstrained).amax() < 1e-8);
    }

    #[test]
    fn size_limit() {
        let p = Problem::new(DMatrix::identity(5, 5), DVector::zeros(5), 1.0).unwrap();
        assert!(matches!(brute_force_global(&p, 4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn singular_support_uses_least_norm() {
        // duplicated column: M singular but lin in range
        let c = dmatrix![1.0, 1.0; 2.0, 2.0];
        let p = Problem::least_squares(&c, &dvector![1.0, 2.0], 0.01).unwrap();
        let a = brute_force_global(&p, 16).unwrap();
        let b = brute_force_global_bitmask(&p, 16).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        assert_eq!(cardinality(&a.x), 1);
    }

    #[test]
    fn indefinite_is_rejected() {
        let p = Problem::new(dmatrix![-1.0], dvector![0.0], 0.1).unwrap();
        assert!(brute_force_global(&p, 16).is_err());
        assert!(brute_force_global_bitmask(&p, 16).is_err());
    }

    #[test]
    fn implementations_agree_with_g_quad() {
        let mut s = Stream::new(9, "oracle-test");
        for _ in 0..20 {
            let n = 1 + (s.uniform() * 6.0) as usize;
            let c = s.normal_matrix(n + 2, n);
            let obs = s.normal_vector(n + 2);
            let pm = s.normal_matrix(n, n);
            let p = Problem::least_squares(&c, &obs, s.uniform_in(0.0, 2.0))
                .unwrap()
                .with_g_quad(&pm * pm.transpose(), s.normal_vector(n))
                .unwrap();
            let a = brute_force_global(&p, 16).unwrap();
            let b = brute_force_global_bitmask(&p, 16).unwrap();
            assert!((a.objective - b.objective).abs() <= 1e-9 * (1.0 + b.objective.abs()));
            let recount = p.smooth_value(&a.x) + p.gamma() * cardinality(&a.x) as f64;
            assert!((recount - a.objective).abs() <= 1e-9 * (1.0 + recount.abs()));
        }
    }

    #[test]
    fn constrained_oracle_respects_rows() {
        // min (x0 - 1)^2 + (x1 - 1)^2 subject to x0 + x1 >= 3
        let p = Problem::new(DMatrix::identity(2, 2), dvector![-2.0, -2.0], 0.1)
            .unwrap()
            .with_constraints(dmatrix![1.0, 1.0], dvector![3.0])
            .unwrap();
        let sol = brute_force_global(&p, 16).unwrap();
        // support {0}: x0 = 3 gives 3.1; support {0,1}: x = (1.5, 1.5) gives -1.3
        assert_eq!(sol.support, vec![0, 1]);
        assert!((sol.objective - -1.3).abs() < 1e-8);
        assert_eq!(sol.infeasible_supports, 1);
    }
}
