//! JSON problem files, solve reports and JSON-lines traces.
//!
//! Doubles are written in shortest round-trip form, so `load(save(p)) == p`
//! for every finite problem.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admm::{SolveTrace, Termination};
use crate::certify::{certify_run, KktReport};
use crate::error::{Error, Result};
use crate::experiments::bench::{run_method, Method, SolverSettings};
use crate::experiments::generator::LsrInstance;
use crate::problem::{cardinality, Problem};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Published JSON schema of [`SolveReport`].
pub const REPORT_SCHEMA: &str = include_str!("../schema/solve_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub lin: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeastSquaresSpec {
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GQuadSpec {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

/// On-disk problem: exactly one of `quadratic` and `least_squares`, matrices
/// as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub least_squares: Option<LeastSquaresSpec>,
    pub gamma: f64,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_quad: Option<GQuadSpec>,
}

fn matrix(origin: &str, field: &str, rows: &[Vec<f64>], shape: (Option<usize>, Option<usize>)) -> Result<DMatrix<f64>> {
    let fail = |msg: String| Error::format(origin, format!("field `{field}`: {msg}"));
    let nrows = rows.len();
    if let Some(r) = shape.0 {
        if nrows != r {
            return Err(fail(format!("expected {r} rows, got {nrows}")));
        }
    }
    let ncols = match shape.1 {
        Some(c) => c,
        None => rows.first().map_or(0, Vec::len),
    };
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(fail(format!("row {i} has {} entries, expected {ncols}", row.len())));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("entry ({i}, {j}) is not finite")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(origin: &str, field: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::format(
            origin,
            format!("field `{field}`: expected {len} entries, got {}", v.len()),
        ));
    }
    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(origin, format!("field `{field}`: entry {j} is not finite")));
    }
    Ok(DVector::from_column_slice(v))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn to_problem(&self, origin: &str) -> Result<Problem> {
        let wrap = |e: Error| match e {
            Error::Format { .. } => e,
            other => Error::format(origin, other.to_string()),
        };
        let mut problem = match (&self.quadratic, &self.least_squares) {
            (Some(q), None) => {
                let n = q.lin.len();
                let m = matrix(origin, "quadratic.M", &q.m, (Some(n), Some(n)))?;
                let lin = vector(origin, "quadratic.lin", &q.lin, n)?;
                if !q.offset.is_finite() {
                    return Err(Error::format(origin, "field `quadratic.offset`: not finite"));
                }
                Problem::new(m, lin, self.gamma).map_err(wrap)?.with_offset(q.offset)
            }
            (None, Some(ls)) => {
                let p = ls.obs.len();
                let c = matrix(origin, "least_squares.C", &ls.c, (Some(p), None))?;
                let obs = vector(origin, "least_squares.obs", &ls.obs, p)?;
                Problem::least_squares(&c, &obs, self.gamma).map_err(wrap)?
            }
            (Some(_), Some(_)) => {
                return Err(Error::format(origin, "give exactly one of `quadratic` and `least_squares`, not both"))
            }
            (None, None) => {
                return Err(Error::format(origin, "missing `quadratic` or `least_squares`"));
            }
        };
        let n = problem.n();
        if let Some(g) = &self.g_quad {
            let p = matrix(origin, "g_quad.P", &g.p, (Some(n), Some(n)))?;
            let c = vector(origin, "g_quad.c", &g.c, n)?;
            problem = problem.with_g_quad(p, c).map_err(wrap)?;
        }
        match (&self.a, &self.b) {
            (Some(a), Some(b)) => {
                let a = matrix(origin, "A", a, (Some(b.len()), Some(n)))?;
                let b = vector(origin, "b", b, a.nrows())?;
                problem = problem.with_constraints(a, b).map_err(wrap)?;
            }
            (None, None) => {}
            _ => return Err(Error::format(origin, "fields `A` and `b` must be given together")),
        }
        Ok(problem)
    }

    /// Quadratic form of `p`, offset included.
    pub fn from_problem(p: &Problem) -> Self {
        ProblemFile {
            quadratic: Some(QuadraticSpec {
                m: rows_of(p.m()),
                lin: p.lin().iter().copied().collect(),
                offset: p.offset(),
            }),
            least_squares: None,
            gamma: p.gamma(),
            a: p.constraints().map(|k| rows_of(&k.a)),
            b: p.constraints().map(|k| k.b.iter().copied().collect()),
            g_quad: p.g_quad().map(|g| GQuadSpec {
                p: rows_of(&g.p),
                c: g.c.iter().copied().collect(),
            }),
        }
    }

    pub fn from_instance(inst: &LsrInstance, gamma: f64) -> Self {
        ProblemFile {
            quadratic: None,
            least_squares: Some(LeastSquaresSpec {
                c: rows_of(&inst.c),
                obs: inst.obs.iter().copied().collect(),
            }),
            gamma,
            a: None,
            b: None,
            g_quad: None,
        }
    }
}

pub fn parse_problem(text: &str, origin: &str) -> Result<Problem> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
    file.to_problem(origin)
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::format(&origin, e.to_string()))?;
    parse_problem(&text, &origin)
}

pub fn save_problem(p: &Problem) -> Result<String> {
    to_json(&ProblemFile::from_problem(p))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Ground truth written next to a generated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub x_true: Vec<f64>,
    pub sigma2: f64,
    pub seed: u64,
    pub card: usize,
}

impl TruthFile {
    pub fn from_instance(inst: &LsrInstance) -> Self {
        TruthFile {
            x_true: inst.x_true.iter().copied().collect(),
            sigma2: inst.sigma2,
            seed: inst.seed,
            card: cardinality(&inst.x_true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema: u32,
    pub solver: Method,
    pub label: String,
    /// Effective options of the run.
    pub options: Value,
    /// Value the method reports, offset included; for the closed-form scheme
    /// the penalty is counted through the selection variables when converged.
    pub objective: f64,
    /// `f(x) + gamma ||x||_0` recomputed at the returned `x`, offset included.
    pub objective_l0: f64,
    /// `f(x) + gamma (n - sum xi)` at the final `y`, closed-form scheme only.
    pub objective_relaxed: Option<f64>,
    pub cardinality: usize,
    pub x: Vec<f64>,
    /// Stopping residual of an ADMM run.
    pub kkt_residual_admm: Option<f64>,
    pub kkt: Option<KktReport>,
    /// The second-order test certifies local minimality only when the smooth
    /// part is convex.
    pub smooth_part_convex: bool,
    pub termination: Termination,
    pub iterations: usize,
    /// Seconds; null unless timings were requested.
    pub wall_time: Option<f64>,
    pub trace_path: Option<String>,
}

/// Options echo for a method.
fn effective_options(method: Method, p: &Problem, settings: &SolverSettings) -> Result<Value> {
    Ok(match method {
        Method::AdmmCf => serde_json::to_value(settings.admm_options(p)?)?,
        Method::Perturbed => serde_json::to_value(settings.perturbed_options())?,
        Method::Iht | Method::Ihtws => serde_json::to_value(settings.iht_options())?,
        Method::Oracle => serde_json::json!({
            "max_n": settings.oracle_max_n.unwrap_or(crate::experiments::oracle::DEFAULT_MAX_N)
        }),
    })
}

fn smooth_part_convex(p: &Problem) -> bool {
    let h = p.smooth_hessian();
    let scale = 1.0 + h.amax();
    h.symmetric_eigenvalues().min() >= -1e-10 * scale
}

/// Runs `method` and assembles its report; the ADMM trace is returned for
/// optional export.
pub fn solve(
    p: &Problem,
    method: Method,
    settings: &SolverSettings,
    certify: bool,
    second_order: bool,
    seed: u64,
) -> Result<(SolveReport, Option<SolveTrace>)> {
    let options = effective_options(method, p, settings)?;
    let run = run_method(method, p, settings, seed)?;
    let out = &run.outcome;
    let objective_l0 = p.smooth_value(&out.x) + p.gamma() * cardinality(&out.x) as f64 + p.offset();
    let mut kkt = None;
    let mut termination = if out.converged {
        Termination::Converged
    } else {
        Termination::MaxIter
    };
    let mut objective_relaxed = None;
    if let Some(t) = &run.trace {
        termination = t.termination;
        if method == Method::AdmmCf {
            let y = &t.final_state.y;
            objective_relaxed = Some(p.eval_relaxed_objective(y)? + p.offset());
        }
        if certify || second_order {
            kkt = Some(certify_run(p, t, second_order)?.0);
        }
    } else if certify || second_order {
        log::warn!("{} has no iterate pair to certify; skipping", method.id());
    }
    let report = SolveReport {
        schema: REPORT_SCHEMA_VERSION,
        solver: method,
        label: method.label().to_string(),
        options,
        objective: out.objective,
        objective_l0,
        objective_relaxed,
        cardinality: cardinality(&out.x),
        x: out.x.iter().copied().collect(),
        kkt_residual_admm: out.kkt_res,
        kkt,
        smooth_part_convex: smooth_part_convex(p),
        termination,
        iterations: out.iters,
        wall_time: out.time_s,
        trace_path: None,
    };
    Ok((report, run.trace))
}

/// One JSON object per iteration record.
pub fn write_trace(trace: &SolveTrace, mut out: impl Write) -> Result<()> {
    for r in &trace.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn sample() -> Problem {
        Problem::new(dmatrix![2.0, 0.5; 0.5, 1.0], dvector![-1.0, 0.25], 0.3)
            .unwrap()
            .with_offset(4.5)
            .with_g_quad(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![0.1, -0.2])
            .unwrap()
            .with_constraints(dmatrix![1.0, 1.0], dvector![-3.0])
            .unwrap()
    }

    #[test]
    fn round_trip_exact() {
        let p = sample();
        let text = save_problem(&p).unwrap();
        assert_eq!(parse_problem(&text, "mem").unwrap(), p);
    }

    #[test]
    fn least_squares_form() {
        let text = r#"{"least_squares": {"C": [[1, 0], [0, 2], [1, 1]], "obs": [1, 2, 3]}, "gamma": 0.5}"#;
        let p = parse_problem(text, "mem").unwrap();
        let direct = Problem::least_squares(&dmatrix![1.0, 0.0; 0.0, 2.0; 1.0, 1.0], &dvector![1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(p, direct);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"quadratic": {"M": [[1, 0], [0]], "lin": [0, 0]}, "gamma": 1}"#, "quadratic.M"),
            (r#"{"quadratic": {"M": [[1]], "lin": [0, 1]}, "gamma": 1}"#, "quadratic.M"),
            (r#"{"quadratic": {"M": [[1]], "lin": [0]}, "gamma": 1, "A": [[1]]}"#, "`A` and `b`"),
            (r#"{"quadratic": {"M": [[1]], "lin": [0]}, "gamma": 1, "A": [[1, 2]], "b": [0]}"#, "field `A`"),
            (r#"{"gamma": 1}"#, "missing"),
            (r#"{"quadratic": {"M": [[1]], "lin": [0]}, "gamma": -1}"#, "gamma"),
            (r#"{"quadratic": {"M": [[1]], "lin": [0]}, "gama": 1}"#, "gama"),
        ];
        for (text, needle) in cases {
            let err = parse_problem(text, "f.json").unwrap_err().to_string();
            assert!(err.starts_with("f.json: "), "{err}");
            assert!(err.contains(needle), "{err} should mention {needle}");
        }
        // syntax errors carry a line number
        let err = parse_problem("{\n\"gamma\": 1,\n oops}", "f.json").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn report_validates_against_schema() {
        let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        let validator = jsonschema::validator_for(&schema).unwrap();
        let p = Problem::least_squares(&dmatrix![1.0, 0.3; 0.2, 1.0; 0.5, -0.5], &dvector![1.0, 2.0, 0.0], 0.2).unwrap();
        let settings = SolverSettings::default();
        for method in [Method::AdmmCf, Method::Perturbed, Method::Iht, Method::Ihtws, Method::Oracle] {
            let (report, _) = solve(&p, method, &settings, true, true, 1).unwrap();
            let value = serde_json::to_value(&report).unwrap();
            let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
            assert!(errors.is_empty(), "{method:?}: {errors:?}");
        }
        let mut bad = serde_json::to_value(solve(&p, Method::Oracle, &settings, false, false, 1).unwrap().0).unwrap();
        bad["schema"] = serde_json::json!(2);
        assert!(!validator.is_valid(&bad));
    }

    #[test]
    fn trace_lines() {
        let p = Problem::new(dmatrix![1.0], dvector![-2.0], 0.1).unwrap();
        let (_, trace) = solve(&p, Method::AdmmCf, &SolverSettings::default(), false, false, 0).unwrap();
        let trace = trace.unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), trace.iterations());
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["k"], 1);
        assert!(first.get("L").is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_random(vals in proptest::collection::vec(-1e6f64..1e6, 12), gamma in 0.0f64..100.0, offset in -1e3f64..1e3) {
            let m = DMatrix::from_row_slice(3, 3, &vals[..9]);
            let m = &m + m.transpose();
            let p = Problem::new(m, DVector::from_column_slice(&vals[9..]), gamma).unwrap().with_offset(offset);
            prop_assert_eq!(parse_problem(&save_problem(&p).unwrap(), "mem").unwrap(), p);
        }
    }
}
