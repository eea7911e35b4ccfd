//! Command-line front end: `solve`, `gen` and `bench`.
//!
//! Exit codes: 0 success, 2 when a solve ran out of iterations or time,
//! 1 for bad input or any other error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use l0cc::admm::Termination;
use l0cc::experiments::bench::{run_benchmark, BenchConfig, Method, SolverSettings};
use l0cc::experiments::generator::{generate_lsr_instance, NoiseSpec, DEFAULT_AMPLITUDE};
use l0cc::io::{load_problem, solve, to_json, write_trace, ProblemFile, TruthFile};
use l0cc::Error;

#[derive(Parser)]
#[command(name = "l0cc", version, about = "l0-penalized quadratic minimization via closed-form ADMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write a JSON report.
    Solve(SolveArgs),
    /// Generate a synthetic sparse least-squares problem.
    Gen(GenArgs),
    /// Run a benchmark grid and write CSV and JSON reports.
    Bench(BenchArgs),
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// admm-cf, perturbed, iht, ihtws or oracle.
    #[arg(long, default_value = "admm-cf")]
    method: String,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    delta_rho: Option<f64>,
    #[arg(long)]
    rho_max: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    max_time: Option<f64>,
    /// Seed for random starts (multi-start IHT).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines iteration trace (ADMM methods).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Add a first-order certificate of the final iterate.
    #[arg(long)]
    certify: bool,
    /// Add the second-order test (implies --certify).
    #[arg(long)]
    second_order: bool,
    /// Record wall-clock times; reports are then no longer reproducible.
    #[arg(long)]
    timings: bool,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    /// Expected number of nonzero true coefficients.
    #[arg(long)]
    k: usize,
    /// Amplitude of the uniform coefficient draw.
    #[arg(long = "K", default_value_t = DEFAULT_AMPLITUDE)]
    amplitude: f64,
    /// ratio10 or snr:<value>.
    #[arg(long, default_value = "ratio10")]
    noise: String,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Problem path; the truth goes to the same stem with `.truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn run_solve(args: SolveArgs) -> Result<ExitCode, Error> {
    let method = Method::parse(&args.method)?;
    let problem = load_problem(&args.problem)?;
    let settings = SolverSettings {
        eps: args.eps,
        rho0: args.rho0,
        delta_rho: args.delta_rho,
        rho_max: args.rho_max,
        max_iter: args.max_iter,
        max_time: args.max_time,
        record_time: args.timings,
        ..SolverSettings::default()
    };
    let (mut report, trace) = solve(
        &problem,
        method,
        &settings,
        args.certify || args.second_order,
        args.second_order,
        args.seed,
    )?;
    if let Some(path) = &args.trace {
        match &trace {
            Some(t) => {
                let mut buf = Vec::new();
                write_trace(t, &mut buf)?;
                write_file(path, &String::from_utf8_lossy(&buf))?;
                report.trace_path = Some(path.display().to_string());
            }
            None => log::warn!("{} produces no iteration trace", method.id()),
        }
    }
    let text = to_json(&report)?;
    match &args.out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    Ok(match report.termination {
        Termination::Converged => ExitCode::SUCCESS,
        Termination::MaxIter | Termination::MaxTime => ExitCode::from(2),
    })
}

fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.json"))
}

fn run_gen(args: GenArgs) -> Result<ExitCode, Error> {
    let noise = NoiseSpec::parse(&args.noise)?;
    if !(args.gamma.is_finite() && args.gamma >= 0.0) {
        return Err(Error::InvalidOptions(format!("gamma must be nonnegative, got {}", args.gamma)));
    }
    let inst = generate_lsr_instance(args.p, args.n, args.k, args.amplitude, noise, args.seed)?;
    write_file(&args.out, &to_json(&ProblemFile::from_instance(&inst, args.gamma))?)?;
    write_file(&truth_path(&args.out), &to_json(&TruthFile::from_instance(&inst))?)?;
    Ok(ExitCode::SUCCESS)
}

fn run_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    let origin = args.config.display().to_string();
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Format {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    let config: BenchConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: origin,
        message: e.to_string(),
    })?;
    let report = run_benchmark(&config, args.jobs)?;
    fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("runs.csv"), &report.runs_csv()?)?;
    write_file(&args.out_dir.join("summary.csv"), &report.summary_csv()?)?;
    write_file(&args.out_dir.join("report.json"), &to_json(&report)?)?;
    let failures = report.rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        log::warn!("{failures} run(s) failed; see the error column");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Gen(a) => run_gen(a),
        Command::Bench(a) => run_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
