//! Eigendecomposition of `M` and the orthogonal congruence `G` that
//! diagonalizes the w-subproblem.
//!
//! `G = B * blockdiag(I, V, I)` with
//! `B = [[I/2, cI, I/2], [I/2, -cI, I/2], [-cI, 0, cI]]` and `c = sqrt(2)/2`.
//! The dense `G` is only materialized on request; products with `G` and `G'`
//! use the block structure.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};

const HALF_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    v: DMatrix<f64>,
    s: DVector<f64>,
}

/// Eigenvalues in ascending order with ties broken by original index.
pub fn factorize(m: &DMatrix<f64>) -> Result<SpectralFactorization> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "M columns",
            expected: n,
            got: m.ncols(),
        });
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let s = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &eig.eigenvectors.column(src));
    }

    let f = SpectralFactorization { v, s };
    let (orth, diag) = f.residuals(m);
    let scale = frobenius(m);
    if orth > 1e-10 * n as f64 || diag > 1e-9 * (1.0 + scale) {
        return Err(Error::Numerical(format!(
            "eigendecomposition inaccurate: ||V'V - I|| = {orth:e}, ||V'MV - S|| = {diag:e}"
        )));
    }
    Ok(f)
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl SpectralFactorization {
    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.s
    }

    /// `(||V'V - I||_F, ||V'MV - diag(s)||_F)`.
    pub fn residuals(&self, m: &DMatrix<f64>) -> (f64, f64) {
        let n = self.n();
        let vt = self.v.transpose();
        let orth = frobenius(&(&vt * &self.v - DMatrix::<f64>::identity(n, n)));
        let diag = frobenius(&(&vt * m * &self.v - DMatrix::from_diagonal(&self.s)));
        (orth, diag)
    }

    /// Dense `3n x 3n` congruence.
    pub fn g_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let c = HALF_SQRT2;
        let mut g = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            g[(i, i)] = 0.5;
            g[(i, 2 * n + i)] = 0.5;
            g[(n + i, i)] = 0.5;
            g[(n + i, 2 * n + i)] = 0.5;
            g[(2 * n + i, i)] = -c;
            g[(2 * n + i, 2 * n + i)] = c;
        }
        let cv = &self.v * c;
        g.view_mut((0, n), (n, n)).copy_from(&cv);
        g.view_mut((n, n), (n, n)).copy_from(&(-cv));
        g
    }

    /// `4 * max_i max(-s_i, 0)`; the penalty must exceed this strictly.
    pub fn min_valid_rho(&self) -> f64 {
        4.0 * self.s.iter().fold(0.0f64, |acc, &si| acc.max(-si))
    }

    /// `q = G'h`.
    pub fn transform_q(&self, h: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        check_len("h", 3 * n, h.len())?;
        let c = HALF_SQRT2;
        let (h1, h2, h3) = (h.rows(0, n), h.rows(n, n), h.rows(2 * n, n));
        let mut q = DVector::zeros(3 * n);
        let diff = (h1 - h2) * c;
        q.rows_mut(n, n).copy_from(&(self.v.tr_mul(&diff)));
        for i in 0..n {
            let avg = 0.5 * h1[i] + 0.5 * h2[i];
            q[i] = avg - c * h3[i];
            q[2 * n + i] = avg + c * h3[i];
        }
        Ok(q)
    }

    /// `w = Gz`.
    pub fn apply_g(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        check_len("z", 3 * n, z.len())?;
        let c = HALF_SQRT2;
        let vz2 = &self.v * z.rows(n, n) * c;
        let mut w = DVector::zeros(3 * n);
        for i in 0..n {
            let avg = 0.5 * z[i] + 0.5 * z[2 * n + i];
            w[i] = avg + vz2[i];
            w[n + i] = avg - vz2[i];
            w[2 * n + i] = c * (z[2 * n + i] - z[i]);
        }
        Ok(w)
    }

    /// Frobenius residuals of `G'HG` and `G'QG` against their diagonal forms,
    /// where `H` is the w-subproblem Hessian and `Q` the complementarity form.
    pub fn verify_diagonalization(&self, m: &DMatrix<f64>, rho: f64) -> (f64, f64) {
        let n = self.n();
        let g = self.g_matrix();
        let half = rho / 2.0;
        let eye = DMatrix::<f64>::identity(n, n);

        let mut h = DMatrix::zeros(3 * n, 3 * n);
        let m_shift = m + &eye * half;
        h.view_mut((0, 0), (n, n)).copy_from(&m_shift);
        h.view_mut((n, n), (n, n)).copy_from(&m_shift);
        h.view_mut((0, n), (n, n)).copy_from(&(-m));
        h.view_mut((n, 0), (n, n)).copy_from(&(-m));
        h.view_mut((2 * n, 2 * n), (n, n)).copy_from(&(&eye * half));

        let mut q = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            q[(i, 2 * n + i)] = 1.0;
            q[(n + i, 2 * n + i)] = 1.0;
            q[(2 * n + i, i)] = 1.0;
            q[(2 * n + i, n + i)] = 1.0;
        }

        let mut h_target = DMatrix::zeros(3 * n, 3 * n);
        let mut q_target = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            h_target[(i, i)] = half;
            h_target[(n + i, n + i)] = 2.0 * self.s[i] + half;
            h_target[(2 * n + i, 2 * n + i)] = half;
            q_target[(i, i)] = -std::f64::consts::SQRT_2;
            q_target[(2 * n + i, 2 * n + i)] = std::f64::consts::SQRT_2;
        }

        let gt = g.transpose();
        let r_h = frobenius(&(&gt * h * &g - h_target));
        let r_q = frobenius(&(&gt * q * &g - q_target));
        (r_h, r_q)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    pub(crate) fn symmetric_strategy(max_n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_n).prop_flat_map(|n| {
            proptest::collection::vec(-5.0f64..5.0, n * n).prop_map(move |vals| {
                let a = DMatrix::from_vec(n, n, vals);
                (&a + a.transpose()) * 0.5
            })
        })
    }

    #[test]
    fn identity_factorization() {
        let f = factorize(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.eigenvalues(), &dvector![1.0, 1.0]);
        let g = f.g_matrix();
        assert!(frobenius(&(g.transpose() * &g - DMatrix::<f64>::identity(6, 6))) < 1e-12);
    }

    #[test]
    fn diagonal_input_sorted() {
        let f = factorize(&dmatrix![3.0, 0.0; 0.0, -1.0]).unwrap();
        assert_eq!(f.eigenvalues(), &dvector![-1.0, 3.0]);
    }

    #[test]
    fn random_four_by_four_is_diagonalized() {
        let m = dmatrix![
            1.0, 0.3, -0.2, 2.0;
            0.3, -1.5, 0.7, 0.1;
            -0.2, 0.7, 0.4, -0.9;
            2.0, 0.1, -0.9, 0.0
        ];
        let f = factorize(&m).unwrap();
        let (orth, diag) = f.residuals(&m);
        assert!(orth < 1e-10 * 4.0);
        assert!(diag < 1e-9);
        assert!(f.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn zero_matrix_diagonalization() {
        let m = DMatrix::zeros(3, 3);
        let (r_h, r_q) = factorize(&m).unwrap().verify_diagonalization(&m, 2.0);
        assert!(r_h <= 1e-10 && r_q <= 1e-10);
    }

    #[test]
    fn min_valid_rho_examples() {
        let f = factorize(&dmatrix![1.0, 0.0; 0.0, 2.0]).unwrap();
        assert_eq!(f.min_valid_rho(), 0.0);
        let f = factorize(&dmatrix![-3.0, 0.0; 0.0, 1.0]).unwrap();
        assert_eq!(f.min_valid_rho(), 12.0);
    }

    #[test]
    fn transform_of_zero_and_columns() {
        let m = dmatrix![2.0, 1.0; 1.0, -1.0];
        let f = factorize(&m).unwrap();
        assert_eq!(f.transform_q(&DVector::zeros(6)).unwrap(), DVector::zeros(6));
        let g = f.g_matrix();
        for j in 0..6 {
            let q = f.transform_q(&g.column(j).clone_owned()).unwrap();
            let mut e = DVector::zeros(6);
            e[j] = 1.0;
            assert!((q - e).norm() < 1e-12);
        }
        assert!(f.transform_q(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn structured_products_match_dense() {
        let m = dmatrix![1.0, -0.4, 0.2; -0.4, 0.5, 0.3; 0.2, 0.3, -2.0];
        let f = factorize(&m).unwrap();
        let g = f.g_matrix();
        let h = dvector![0.3, -1.0, 2.0, 0.5, 0.0, -0.7, 1.1, 0.2, -0.4];
        assert!((f.transform_q(&h).unwrap() - g.transpose() * &h).norm() < 1e-13);
        assert!((f.apply_g(&h).unwrap() - &g * &h).norm() < 1e-13);
    }

    proptest! {
        #[test]
        fn congruence_diagonalizes(m in symmetric_strategy(8), pick in 0usize..3) {
            let f = factorize(&m).unwrap();
            let n = f.n();
            let rho = [f.min_valid_rho() + 0.1, 10.0, 1000.0][pick];
            let g = f.g_matrix();
            let orth = frobenius(&(g.transpose() * &g - DMatrix::<f64>::identity(3 * n, 3 * n)));
            prop_assert!(orth <= 1e-10 * n as f64);
            let (r_h, r_q) = f.verify_diagonalization(&m, rho);
            let scale = 1.0 + frobenius(&m);
            prop_assert!(r_h <= 1e-9 * scale * (1.0 + rho), "r_h = {r_h}");
            prop_assert!(r_q <= 1e-9 * scale, "r_q = {r_q}");
        }

        #[test]
        fn spectrum_invariant_under_permutation(m in symmetric_strategy(6), seed in any::<u64>()) {
            let n = m.nrows();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (state >> 33) as usize % (i + 1));
            }
            let pm = DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
            let a = factorize(&m).unwrap();
            let b = factorize(&pm).unwrap();
            prop_assert!(a.eigenvalues().as_slice().windows(2).all(|w| w[0] <= w[1]));
            let tol = 1e-9 * (1.0 + frobenius(&m));
            prop_assert!((a.eigenvalues() - b.eigenvalues()).amax() <= tol);
        }

        #[test]
        fn min_valid_rho_margin(m in symmetric_strategy(6)) {
            let f = factorize(&m).unwrap();
            let rho = f.min_valid_rho() + 1e-6;
            prop_assert!(f.eigenvalues().iter().all(|&s| rho / 2.0 + 2.0 * s > 0.0));
        }

        #[test]
        fn transform_preserves_norm(m in symmetric_strategy(5), raw in proptest::collection::vec(-10.0f64..10.0, 15)) {
            let f = factorize(&m).unwrap();
            let h = DVector::from_iterator(3 * f.n(), raw.into_iter().take(3 * f.n()));
            let q = f.transform_q(&h).unwrap();
            prop_assert!((q.norm() - h.norm()).abs() <= 1e-10 * (1.0 + h.norm()));
        }
    }
}
