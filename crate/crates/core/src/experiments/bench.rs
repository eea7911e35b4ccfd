//! Benchmark grid runner. Every (cell, seed) job owns its random streams and
//! results are merged in job order, so output does not depend on the number
//! of worker threads.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{run_admm_cf, run_perturbed_admm, AdmmOptions, PerturbedOptions, SolveTrace};
use crate::certify::kkt_residual_admm;
use crate::error::{Error, Result};
use crate::problem::{cardinality, Problem};
use crate::spectral::factorize;

use super::generator::{generate_lsr_instance, NoiseSpec, DEFAULT_AMPLITUDE};
use super::iht::{iht_multistart, iht_warm_start, IhtOptions};
use super::metrics::{compute_metrics, median, MethodOutcome, Metrics};
use super::oracle::{brute_force_global, DEFAULT_MAX_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdmmCf,
    Perturbed,
    Iht,
    Ihtws,
    Oracle,
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::AdmmCf => "admm-cf",
            Method::Perturbed => "perturbed",
            Method::Iht => "iht",
            Method::Ihtws => "ihtws",
            Method::Oracle => "oracle",
        }
    }

    /// Human label; the warm-started baseline is a stand-in and says so.
    pub fn label(&self) -> &'static str {
        match self {
            Method::AdmmCf => "ADMM_cf",
            Method::Perturbed => "perturbed ADMM",
            Method::Iht => "IHT",
            Method::Ihtws => "IHTWS (reconstructed)",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Method::AdmmCf, Method::Perturbed, Method::Iht, Method::Ihtws, Method::Oracle]
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidOptions(format!("unknown method {s:?}")))
    }
}

/// Overrides shared by the command line and benchmark configs. Unset fields
/// keep each method's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub eps: Option<f64>,
    pub rho0: Option<f64>,
    pub delta_rho: Option<f64>,
    pub rho_max: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_time: Option<f64>,
    pub iht_starts: Option<usize>,
    pub oracle_max_n: Option<usize>,
    /// Record wall-clock times; off by default so reports are reproducible.
    pub record_time: bool,
}

impl SolverSettings {
    pub fn admm_options(&self, p: &Problem) -> Result<AdmmOptions> {
        let min_valid = factorize(p.m())?.min_valid_rho();
        let mut o = AdmmOptions::defaults(p.gamma(), min_valid);
        if let Some(r) = self.rho0 {
            o.rho0 = r;
            o.delta = r / 2.0;
            o.rho_max = 2000f64.max(2.0 * r);
        }
        if let Some(v) = self.delta_rho {
            o.delta_rho = v;
        }
        if let Some(v) = self.rho_max {
            o.rho_max = v;
        }
        if let Some(v) = self.eps {
            o.eps = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        o.max_time = self.max_time;
        o.record_time = self.record_time;
        Ok(o)
    }

    pub fn perturbed_options(&self) -> PerturbedOptions {
        let mut o = PerturbedOptions::drifting_preset();
        if let Some(v) = self.eps {
            o.eps = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        o.max_time = self.max_time;
        o.record_time = self.record_time;
        o
    }

    pub fn iht_options(&self) -> IhtOptions {
        let mut o = IhtOptions::default();
        if let Some(v) = self.iht_starts {
            o.starts = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        o
    }
}

/// A method's outcome plus the ADMM trace when there is one.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub outcome: MethodOutcome,
    pub trace: Option<SolveTrace>,
}

/// Runs one method; `seed` drives the random starts of multi-start IHT.
pub fn run_method(method: Method, p: &Problem, settings: &SolverSettings, seed: u64) -> Result<MethodRun> {
    let clock = Instant::now();
    let mut trace = None;
    let (x, value, kkt_res, iters, converged) = match method {
        Method::AdmmCf | Method::Perturbed => {
            let t = if method == Method::AdmmCf {
                run_admm_cf(p, &settings.admm_options(p)?)?
            } else {
                run_perturbed_admm(p, &settings.perturbed_options())?
            };
            let (x, value) = t.reported(p);
            let kkt = kkt_residual_admm(&t).ok();
            let out = (x, value, kkt, t.iterations(), t.converged());
            trace = Some(t);
            out
        }
        Method::Iht => {
            let r = iht_multistart(p, &settings.iht_options(), seed)?;
            (r.x, r.objective, None, r.iterations, r.converged)
        }
        Method::Ihtws => {
            let r = iht_warm_start(p, &settings.iht_options())?;
            (r.x, r.objective, None, r.iterations, r.converged)
        }
        Method::Oracle => {
            let s = brute_force_global(p, settings.oracle_max_n.unwrap_or(DEFAULT_MAX_N))?;
            (s.x, s.objective, None, 1usize << p.n(), true)
        }
    };
    Ok(MethodRun {
        outcome: MethodOutcome {
            x,
            objective: value + p.offset(),
            kkt_res,
            time_s: settings.record_time.then(|| clock.elapsed().as_secs_f64()),
            iters,
            converged,
        },
        trace,
    })
}

fn default_amplitude() -> f64 {
    DEFAULT_AMPLITUDE
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::VarianceRatio
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub p: usize,
    pub n: usize,
    /// Expected cardinality of the true coefficients.
    pub k: usize,
    pub gamma: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

impl CellSpec {
    pub fn key(&self) -> String {
        format!("p{}_n{}_k{}_g{}", self.p, self.n, self.k, self.gamma)
    }
}

/// Cartesian product of the listed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub p: Vec<usize>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub gamma: Vec<f64>,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub cells: Vec<CellSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Method whose objective is the RDF reference; defaults to the oracle
    /// when listed, otherwise the first method.
    #[serde(default)]
    pub reference: Option<Method>,
    #[serde(default)]
    pub settings: SolverSettings,
}

impl BenchConfig {
    /// Explicit cells first, then the grid in `p, n, k, gamma` order.
    pub fn expanded_cells(&self) -> Vec<CellSpec> {
        let mut cells = self.cells.clone();
        if let Some(g) = &self.grid {
            for &p in &g.p {
                for &n in &g.n {
                    for &k in &g.k {
                        for &gamma in &g.gamma {
                            cells.push(CellSpec {
                                p,
                                n,
                                k,
                                gamma,
                                noise: g.noise,
                                amplitude: g.amplitude,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn reference_method(&self) -> Method {
        self.reference.unwrap_or_else(|| {
            if self.methods.contains(&Method::Oracle) {
                Method::Oracle
            } else {
                self.methods[0]
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidOptions(m.to_string()));
        if self.methods.is_empty() {
            return bad("method list is empty");
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty");
        }
        let cells = self.expanded_cells();
        if cells.is_empty() {
            return bad("no cells: give `cells` or `grid`");
        }
        for c in &cells {
            if c.p == 0 || c.n == 0 || c.k == 0 || c.k > c.n {
                return bad(&format!("cell {} needs p, n > 0 and 0 < k <= n", c.key()));
            }
            if !(c.gamma.is_finite() && c.gamma >= 0.0) {
                return bad(&format!("cell {} has an invalid gamma", c.key()));
            }
        }
        if let Some(r) = self.reference {
            if !self.methods.contains(&r) {
                return bad("reference method must be one of the listed methods");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub cell: String,
    pub p: usize,
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
    pub seed: u64,
    pub true_card: usize,
    pub method: Method,
    pub label: String,
    pub converged: Option<bool>,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub method: Method,
    pub label: String,
    pub runs: usize,
    pub failures: usize,
    pub rdf_median: Option<f64>,
    pub rdf_max: Option<f64>,
    pub objective_median: Option<f64>,
    pub card_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub reference: Method,
    pub config: BenchConfig,
    pub rows: Vec<RunRow>,
    pub summary: Vec<CellSummary>,
}

fn run_job(cell: &CellSpec, seed: u64, cfg: &BenchConfig, reference: Method) -> Vec<RunRow> {
    let key = cell.key();
    let base = |method: Method| RunRow {
        cell: key.clone(),
        p: cell.p,
        n: cell.n,
        k: cell.k,
        gamma: cell.gamma,
        seed,
        true_card: 0,
        method,
        label: method.label().to_string(),
        converged: None,
        metrics: None,
        error: None,
    };
    let problem = generate_lsr_instance(cell.p, cell.n, cell.k, cell.amplitude, cell.noise, seed)
        .and_then(|inst| Ok((cardinality(&inst.x_true), inst.to_problem(cell.gamma)?)));
    let (true_card, problem) = match problem {
        Ok(v) => v,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| RunRow {
                    error: Some(e.to_string()),
                    ..base(m)
                })
                .collect()
        }
    };
    let runs: Vec<(Method, Result<MethodOutcome>)> = cfg
        .methods
        .iter()
        .map(|&m| (m, run_method(m, &problem, &cfg.settings, seed).map(|r| r.outcome)))
        .collect();
    let fstar = runs
        .iter()
        .find(|(m, _)| *m == reference)
        .and_then(|(_, r)| r.as_ref().ok())
        .map(|o| o.objective);
    runs.into_iter()
        .map(|(m, r)| match r {
            Ok(o) => {
                let mut metrics = compute_metrics(&o, fstar.unwrap_or(f64::NAN));
                if fstar.is_none() {
                    metrics.rdf = None;
                }
                RunRow {
                    true_card,
                    converged: Some(o.converged),
                    metrics: Some(metrics),
                    ..base(m)
                }
            }
            Err(e) => RunRow {
                true_card,
                error: Some(e.to_string()),
                ..base(m)
            },
        })
        .collect()
}

fn summarize(rows: &[RunRow], cells: &[CellSpec], methods: &[Method]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for cell in cells {
        let key = cell.key();
        for &m in methods {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.cell == key && r.method == m).collect();
            let ok: Vec<&Metrics> = mine.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let rdfs: Vec<f64> = ok.iter().filter_map(|x| x.rdf).collect();
            let objs: Vec<f64> = ok.iter().map(|x| x.objective).collect();
            out.push(CellSummary {
                cell: key.clone(),
                method: m,
                label: m.label().to_string(),
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                rdf_median: median(&rdfs),
                rdf_max: rdfs.iter().copied().reduce(f64::max),
                objective_median: median(&objs),
                card_mean: (!ok.is_empty())
                    .then(|| ok.iter().map(|x| x.card as f64).sum::<f64>() / ok.len() as f64),
            });
        }
    }
    out
}

/// Runs every (cell, seed) job on a pool of `jobs` threads. Per-job failures
/// are recorded in the rows; only an invalid config is an error.
pub fn run_benchmark(cfg: &BenchConfig, jobs: usize) -> Result<BenchReport> {
    cfg.validate()?;
    let cells = cfg.expanded_cells();
    let reference = cfg.reference_method();
    let work: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidOptions(format!("cannot start worker pool: {e}")))?;
    let per_job: Vec<Vec<RunRow>> = pool.install(|| {
        work.par_iter()
            .map(|&(c, s)| {
                log::debug!("bench job {} seed {s}", cells[c].key());
                run_job(&cells[c], s, cfg, reference)
            })
            .collect()
    });
    let rows: Vec<RunRow> = per_job.into_iter().flatten().collect();
    let summary = summarize(&rows, &cells, &cfg.methods);
    Ok(BenchReport {
        schema: 1,
        reference,
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchReport {
    /// One row per (cell, seed, method).
    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cell", "p", "n", "k", "gamma", "seed", "true_card", "method", "label", "converged", "objective",
            "rdf", "abs_gap", "card", "kkt_res", "iters", "time_s", "error",
        ])
        .map_err(csv_error)?;
        for r in &self.rows {
            let m = r.metrics.as_ref();
            w.write_record([
                r.cell.clone(),
                r.p.to_string(),
                r.n.to_string(),
                r.k.to_string(),
                r.gamma.to_string(),
                r.seed.to_string(),
                r.true_card.to_string(),
                r.method.id().to_string(),
                r.label.clone(),
                opt(r.converged),
                opt(m.map(|m| m.objective)),
                opt(m.and_then(|m| m.rdf)),
                opt(m.map(|m| m.abs_gap)),
                opt(m.map(|m| m.card)),
                opt(m.and_then(|m| m.kkt_res)),
                opt(m.map(|m| m.iters)),
                opt(m.and_then(|m| m.time_s)),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
        finish(w)
    }

    /// One row per (cell, method).
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "cell", "method", "label", "runs", "failures", "rdf_median", "rdf_max", "objective_median", "card_mean",
        ])
        .map_err(csv_error)?;
        for s in &self.summary {
            w.write_record([
                s.cell.clone(),
                s.method.id().to_string(),
                s.label.clone(),
                s.runs.to_string(),
                s.failures.to_string(),
                opt(s.rdf_median),
                opt(s.rdf_max),
                opt(s.objective_median),
                opt(s.card_mean),
            ])
            .map_err(csv_error)?;
        }
        finish(w)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Numerical(format!("csv output: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv output: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numerical(format!("csv output: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(methods: Vec<Method>) -> BenchConfig {
        BenchConfig {
            cells: vec![
                CellSpec {
                    p: 20,
                    n: 6,
                    k: 2,
                    gamma: 1.0,
                    noise: NoiseSpec::VarianceRatio,
                    amplitude: 60.0,
                },
                CellSpec {
                    p: 20,
                    n: 6,
                    k: 4,
                    gamma: 10.0,
                    noise: NoiseSpec::VarianceRatio,
                    amplitude: 60.0,
                },
            ],
            grid: None,
            seeds: vec![1, 2],
            methods,
            reference: None,
            settings: SolverSettings::default(),
        }
    }

    #[test]
    fn identical_methods_identical_metrics() {
        let cfg = small_config(vec![Method::Ihtws, Method::Ihtws]);
        let rep = run_benchmark(&cfg, 1).unwrap();
        for pair in rep.rows.chunks(2) {
            assert_eq!(pair[0].metrics, pair[1].metrics);
            assert_eq!(pair[0].metrics.as_ref().unwrap().rdf, Some(0.0));
        }
    }

    #[test]
    fn smoke_rows_and_determinism_across_jobs() {
        let cfg = small_config(vec![Method::AdmmCf, Method::Iht, Method::Oracle]);
        let a = run_benchmark(&cfg, 1).unwrap();
        let b = run_benchmark(&cfg, 4).unwrap();
        assert_eq!(a.rows.len(), 2 * 2 * 3);
        assert_eq!(a.summary.len(), 2 * 3);
        assert_eq!(a.runs_csv().unwrap(), b.runs_csv().unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for r in a.rows.iter().filter(|r| r.method == Method::Oracle) {
            assert_eq!(r.metrics.as_ref().unwrap().rdf, Some(0.0));
        }
        for r in &a.rows {
            assert!(r.metrics.as_ref().unwrap().rdf.unwrap() >= -1e-9);
        }
    }

    #[test]
    fn config_errors() {
        assert!(run_benchmark(&small_config(vec![]), 1).is_err());
        let mut cfg = small_config(vec![Method::Iht]);
        cfg.reference = Some(Method::Oracle);
        assert!(run_benchmark(&cfg, 1).is_err());
    }

    #[test]
    fn per_cell_failure_is_recorded() {
        let mut cfg = small_config(vec![Method::Iht, Method::Oracle]);
        cfg.settings.oracle_max_n = Some(3);
        let rep = run_benchmark(&cfg, 2).unwrap();
        let oracle_rows: Vec<_> = rep.rows.iter().filter(|r| r.method == Method::Oracle).collect();
        assert!(oracle_rows.iter().all(|r| r.error.is_some()));
        // no reference objective, so no rdf
        assert!(rep.rows.iter().all(|r| r.metrics.as_ref().map_or(true, |m| m.rdf.is_none())));
    }

    #[test]
    fn grid_expansion_order() {
        let cfg = BenchConfig {
            cells: vec![],
            grid: Some(GridSpec {
                p: vec![50],
                n: vec![10, 20],
                k: vec![1],
                gamma: vec![0.1, 1.0],
                noise: NoiseSpec::VarianceRatio,
                amplitude: 60.0,
            }),
            ..small_config(vec![Method::Iht])
        };
        let keys: Vec<String> = cfg.expanded_cells().iter().map(CellSpec::key).collect();
        assert_eq!(keys, ["p50_n10_k1_g0.1", "p50_n10_k1_g1", "p50_n20_k1_g0.1", "p50_n20_k1_g1"]);
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"grid": {"p": [50], "n": [10], "k": [4], "gamma": [1.0]},
                       "seeds": [0, 1], "methods": ["admm-cf", "oracle"],
                       "settings": {"eps": 1e-4}}"#;
        let cfg: BenchConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.reference_method(), Method::Oracle);
        assert_eq!(cfg.expanded_cells()[0].noise, NoiseSpec::VarianceRatio);
        assert!(serde_json::from_str::<BenchConfig>(r#"{"seeds": [], "methods": [], "bogus": 1}"#).is_err());
    }
}
