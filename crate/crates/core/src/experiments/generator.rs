use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::Stream;

/// Amplitude of the uniform draw for the true coefficients.
pub const DEFAULT_AMPLITUDE: f64 = 60.0;

/// How the noise variance is tied to the true signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `sigma^2 = ||x_true||^2 / 10`.
    VarianceRatio,
    /// `sigma^2 = ||x_true||^2 / snr`.
    Snr(f64),
}

impl NoiseSpec {
    /// Parses `ratio10` or `snr:<value>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "ratio10" {
            return Ok(NoiseSpec::VarianceRatio);
        }
        if let Some(v) = s.strip_prefix("snr:") {
            let snr: f64 = v
                .parse()
                .map_err(|_| Error::InvalidOptions(format!("bad snr value {v:?}")))?;
            if !(snr.is_finite() && snr > 0.0) {
                return Err(Error::InvalidOptions(format!("snr must be positive, got {snr}")));
            }
            return Ok(NoiseSpec::Snr(snr));
        }
        Err(Error::InvalidOptions(format!(
            "noise must be ratio10 or snr:<value>, got {s:?}"
        )))
    }

    fn variance(&self, signal_energy: f64) -> f64 {
        match *self {
            NoiseSpec::VarianceRatio => signal_energy / 10.0,
            NoiseSpec::Snr(snr) => signal_energy / snr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsrInstance {
    pub c: DMatrix<f64>,
    pub obs: DVector<f64>,
    pub x_true: DVector<f64>,
    pub sigma2: f64,
    pub seed: u64,
}

impl LsrInstance {
    /// `||C x - obs||^2 + gamma ||x||_0` with the constant `obs'obs` as offset.
    pub fn to_problem(&self, gamma: f64) -> Result<Problem> {
        Problem::least_squares(&self.c, &self.obs, gamma)
    }
}

/// Coefficients are uniform on `(-K, K)` and zeroed when `|x| >= kK/n`, so
/// the expected cardinality is `k`; the realized one varies.
pub fn generate_lsr_instance(
    p: usize,
    n: usize,
    k: usize,
    amplitude: f64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<LsrInstance> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidOptions("p and n must be positive".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidOptions(format!("need 0 < k <= n, got k={k}, n={n}")));
    }
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(Error::InvalidOptions(format!("amplitude must be positive, got {amplitude}")));
    }
    let mut coef = Stream::new(seed, "lsr/x_true");
    let threshold = k as f64 * amplitude / n as f64;
    let x_true = DVector::from_fn(n, |_, _| {
        let v = coef.uniform_in(-amplitude, amplitude);
        if v.abs() >= threshold {
            0.0
        } else {
            v
        }
    });
    let c = Stream::new(seed, "lsr/dictionary").normal_matrix(p, n);
    let sigma2 = noise.variance(x_true.norm_squared());
    let mut noise_stream = Stream::new(seed, "lsr/noise");
    let sigma = sigma2.sqrt();
    let obs = &c * &x_true + noise_stream.normal_vector(p) * sigma;
    Ok(LsrInstance {
        c,
        obs,
        x_true,
        sigma2,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::cardinality;

    #[test]
    fn full_k_is_dense() {
        let inst = generate_lsr_instance(20, 8, 8, 60.0, NoiseSpec::VarianceRatio, 3).unwrap();
        assert_eq!(cardinality(&inst.x_true), 8);
    }

    #[test]
    fn reproducible() {
        let a = generate_lsr_instance(30, 6, 2, 60.0, NoiseSpec::Snr(5.0), 11).unwrap();
        let b = generate_lsr_instance(30, 6, 2, 60.0, NoiseSpec::Snr(5.0), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_lsr_instance(30, 6, 2, 60.0, NoiseSpec::Snr(5.0), 12).unwrap();
        assert_ne!(a.c, c.c);
    }

    #[test]
    fn mean_cardinality_matches_binomial() {
        // each coordinate survives with probability k/n
        let (n, k, trials) = (10usize, 4usize, 1000u64);
        let total: usize = (0..trials)
            .map(|s| cardinality(&generate_lsr_instance(50, n, k, 60.0, NoiseSpec::VarianceRatio, s).unwrap().x_true))
            .sum();
        let mean = total as f64 / trials as f64;
        let q = k as f64 / n as f64;
        let sd_of_mean = (n as f64 * q * (1.0 - q) / trials as f64).sqrt();
        assert!((mean - k as f64).abs() <= 3.0 * sd_of_mean, "mean {mean}");
    }

    #[test]
    fn noise_variance_rules() {
        let a = generate_lsr_instance(10, 5, 5, 60.0, NoiseSpec::VarianceRatio, 1).unwrap();
        assert_eq!(a.sigma2, a.x_true.norm_squared() / 10.0);
        let b = generate_lsr_instance(10, 5, 5, 60.0, NoiseSpec::Snr(4.0), 1).unwrap();
        assert_eq!(b.sigma2, b.x_true.norm_squared() / 4.0);
    }

    #[test]
    fn problem_mapping() {
        let inst = generate_lsr_instance(12, 4, 2, 60.0, NoiseSpec::VarianceRatio, 5).unwrap();
        let p = inst.to_problem(0.5).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.0, 0.5]);
        let direct = (&inst.c * &x - &inst.obs).norm_squared();
        assert!((p.smooth_value(&x) + p.offset() - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn invalid_parameters() {
        assert!(generate_lsr_instance(10, 5, 0, 60.0, NoiseSpec::VarianceRatio, 1).is_err());
        assert!(generate_lsr_instance(10, 5, 6, 60.0, NoiseSpec::VarianceRatio, 1).is_err());
        assert!(generate_lsr_instance(10, 5, 2, -1.0, NoiseSpec::VarianceRatio, 1).is_err());
        assert!(NoiseSpec::parse("snr:-2").is_err());
        assert_eq!(NoiseSpec::parse("snr:2.5").unwrap(), NoiseSpec::Snr(2.5));
        assert_eq!(NoiseSpec::parse("ratio10").unwrap(), NoiseSpec::VarianceRatio);
    }
}
