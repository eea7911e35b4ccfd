use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::problem::cardinality;

/// What a method returned on one instance, with the objective including the
/// problem's constant offset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_res: Option<f64>,
    pub time_s: Option<f64>,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub objective: f64,
    /// `100 (f - f_ref) / |f_ref|`; `None` when the reference is zero.
    pub rdf: Option<f64>,
    /// `f - f_ref`, always reported.
    pub abs_gap: f64,
    pub card: usize,
    pub kkt_res: Option<f64>,
    pub time_s: Option<f64>,
    pub iters: usize,
}

pub fn relative_difference(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| 100.0 * (value - reference) / reference.abs())
}

pub fn compute_metrics(result: &MethodOutcome, reference_fstar: f64) -> Metrics {
    Metrics {
        objective: result.objective,
        rdf: relative_difference(result.objective, reference_fstar),
        abs_gap: result.objective - reference_fstar,
        card: cardinality(&result.x),
        kkt_res: result.kkt_res,
        time_s: result.time_s,
        iters: result.iters,
    }
}

/// Median of a nonempty sample; the mean of the two middle values for even
/// sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn outcome(objective: f64, x: DVector<f64>) -> MethodOutcome {
        MethodOutcome {
            x,
            objective,
            kkt_res: None,
            time_s: None,
            iters: 3,
            converged: true,
        }
    }

    #[test]
    fn rdf_examples() {
        assert_eq!(compute_metrics(&outcome(10.0, dvector![1.0]), 10.0).rdf, Some(0.0));
        let m = compute_metrics(&outcome(11.0, dvector![1.0]), 10.0);
        assert!((m.rdf.unwrap() - 10.0).abs() < 1e-12);
        let z = compute_metrics(&outcome(0.5, dvector![1.0]), 0.0);
        assert_eq!(z.rdf, None);
        assert_eq!(z.abs_gap, 0.5);
    }

    #[test]
    fn card_uses_zero_tolerance() {
        let x = dvector![1e-12, 0.0, -3.0, 2e-9];
        let expected = x.iter().filter(|v: &&f64| v.abs() > 1e-9).count();
        assert_eq!(compute_metrics(&outcome(1.0, x), 1.0).card, expected);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
