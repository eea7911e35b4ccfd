//! Outer ADMM loops on the split variable `w` (copy `y`, multiplier `lambda`).
//!
//! * [`run_admm_cf`]: closed-form w-step, convex y-step, adaptive penalty.
//! * [`run_perturbed_admm`]: damped multiplier update and a proximal term on
//!   the w-step, with constant (or optionally scheduled) parameters.
//!
//! Both record per-iteration residuals and the merit function the
//! convergence theory says is monotone, so descent can be audited afterwards.

use std::time::Instant;

use log::{debug, info};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{cardinality, Problem, SplitPoint};
use crate::spectral::{factorize, SpectralFactorization};
use crate::wstep::{build_h, solve_from_h, TieBreakPolicy};
use crate::ystep::{solve_y, InnerSolverOptions};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub rho0: f64,
    /// Margin in the penalty-increase test; `0 < delta < rho0`.
    pub delta: f64,
    /// Penalty growth factor, `> 1`.
    pub delta_rho: f64,
    pub rho_max: f64,
    /// Stopping tolerance on `max(||w - y||, rho ||dy||)`.
    pub eps: f64,
    pub max_iter: usize,
    /// Wall-clock budget in seconds, checked between iterations.
    pub max_time: Option<f64>,
    pub tie_break: TieBreakPolicy,
    pub inner: InnerSolverOptions,
    /// Store wall-clock time in each iteration record.
    pub record_time: bool,
}

impl AdmmOptions {
    /// `rho0 = gamma`, `delta = rho0/2`, `delta_rho = 1.01`, `rho_max = 2000`,
    /// `eps = 1e-4`. When `gamma` does not exceed `min_valid_rho`, `rho0` is
    /// moved to `min_valid_rho + 1`.
    pub fn defaults(gamma: f64, min_valid_rho: f64) -> Self {
        let rho0 = if gamma > min_valid_rho {
            gamma
        } else {
            min_valid_rho + 1.0
        };
        AdmmOptions {
            rho0,
            delta: rho0 / 2.0,
            delta_rho: 1.01,
            rho_max: 2000f64.max(2.0 * rho0),
            eps: 1e-4,
            max_iter: 100_000,
            max_time: None,
            tie_break: TieBreakPolicy::CanonicalE1,
            inner: InnerSolverOptions::default(),
            record_time: false,
        }
    }

    pub fn validate(&self, min_valid_rho: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOptions(msg));
        if !(self.rho0 > min_valid_rho) {
            return Err(Error::PenaltyTooSmall {
                rho: self.rho0,
                min_valid: min_valid_rho,
            });
        }
        if !(self.delta > 0.0 && self.delta < self.rho0) {
            return bad(format!("need 0 < delta < rho0, got delta = {}", self.delta));
        }
        if !(self.delta_rho > 1.0 && self.delta_rho.is_finite()) {
            return bad(format!("need delta_rho > 1, got {}", self.delta_rho));
        }
        if !(self.rho_max > self.rho0) {
            return bad(format!("need rho_max > rho0, got {}", self.rho_max));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if let Some(t) = self.max_time {
            if !(t > 0.0) {
                return bad(format!("max_time must be positive, got {t}"));
            }
        }
        self.inner.validate()
    }
}

/// Geometric drift of `(alpha, rho, mu)` after each iteration until `alpha`
/// reaches `alpha_min`. Leaves the constant-parameter theory; heuristic only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSchedule {
    pub factor: f64,
    pub alpha_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedOptions {
    pub alpha: f64,
    pub rho: f64,
    /// Weight of the proximal term `(mu/2)||w - w_k||^2`.
    pub prox_weight: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub max_time: Option<f64>,
    pub tie_break: TieBreakPolicy,
    pub inner: InnerSolverOptions,
    /// Weight on `||lambda_k - lambda_{k-1}||^2` in the recorded merit value.
    pub tau: f64,
    pub schedule: Option<ParamSchedule>,
    pub record_time: bool,
}

impl PerturbedOptions {
    pub fn new(alpha: f64, rho: f64, prox_weight: f64) -> Self {
        PerturbedOptions {
            alpha,
            rho,
            prox_weight,
            eps: 1e-4,
            max_iter: 100_000,
            max_time: None,
            tie_break: TieBreakPolicy::CanonicalE1,
            inner: InnerSolverOptions::default(),
            tau: 2.0,
            schedule: None,
            record_time: false,
        }
    }

    /// Start at `(alpha, rho, mu) = (1, 1/2, 3)` and scale by `1.001` per
    /// iteration (alpha down, rho and mu up) until `alpha <= 1e-3`.
    pub fn drifting_preset() -> Self {
        PerturbedOptions {
            schedule: Some(ParamSchedule {
                factor: 1.001,
                alpha_min: 1e-3,
            }),
            ..PerturbedOptions::new(1.0, 0.5, 3.0)
        }
    }

    pub fn validate(&self, min_valid_rho: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOptions(msg));
        let ra = self.rho * self.alpha;
        if !(ra > 0.0 && ra < 1.0) {
            return bad(format!("need rho*alpha in (0, 1), got {ra}"));
        }
        if !(self.rho > min_valid_rho) {
            return Err(Error::PenaltyTooSmall {
                rho: self.rho,
                min_valid: min_valid_rho,
            });
        }
        if !(self.prox_weight >= 0.0 && self.prox_weight.is_finite()) {
            return bad(format!("prox weight must be nonnegative, got {}", self.prox_weight));
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if let Some(s) = &self.schedule {
            if !(s.factor > 1.0 && s.alpha_min > 0.0) {
                return bad("schedule needs factor > 1 and alpha_min > 0".into());
            }
        }
        self.inner.validate()
    }
}

/// `(alpha, rho, mu) = (eps, 1/(2 eps), 2/eps + 1)`; with `nu = eps`, `R = 2`
/// and `tau = 2` these satisfy [`check_constants`].
pub fn epsilon_schedule(eps: f64) -> Result<PerturbedOptions> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidOptions(format!("eps must be positive, got {eps}")));
    }
    Ok(PerturbedOptions::new(eps, 1.0 / (2.0 * eps), 2.0 / eps + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl Constants {
    pub fn valid(&self) -> bool {
        self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0 && self.c4 > 0.0 && self.c5 >= 0.0
    }
}

/// Descent constants of the perturbed scheme for `(alpha, rho, mu)` and the
/// analysis parameters `tau`, `nu`, `r`.
pub fn check_constants(alpha: f64, rho: f64, mu: f64, tau: f64, nu: f64, r: f64) -> Constants {
    let ra = rho * alpha;
    Constants {
        c1: mu / 2.0 - tau / (2.0 * nu),
        c2: rho / 2.0,
        c3: tau * (alpha - nu / 2.0) - (1.0 - ra) * (2.0 - ra) / (2.0 * rho),
        c4: (1.0 - ra) * ((r + 1.0) * ra - 1.0) / (2.0 * rho * r),
        c5: (1.0 - ra) / (2.0 * rho) * (tau - (1.0 - ra) * r),
    }
}

/// Returns `delta_rho * rho_k` when `(rho_k - delta)||dy|| < sqrt(2)||dlambda||`
/// and `rho_k <= rho_max`, else `rho_k`.
pub fn penalty_update(rho_k: f64, dy_norm: f64, dl_norm: f64, opts: &AdmmOptions) -> f64 {
    if penalty_trigger(rho_k, opts.delta, dy_norm, dl_norm) && rho_k <= opts.rho_max {
        opts.delta_rho * rho_k
    } else {
        rho_k
    }
}

fn penalty_trigger(rho_k: f64, delta: f64, dy_norm: f64, dl_norm: f64) -> bool {
    (rho_k - delta) * dy_norm < SQRT2 * dl_norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub w: SplitPoint,
    pub y: SplitPoint,
    pub lambda: DVector<f64>,
    /// Penalty to be used by the next iteration.
    pub rho: f64,
    pub k: usize,
}

impl AdmmState {
    /// `w = y = (e; 0; 0)`, `lambda = 0`.
    pub fn initial(n: usize, rho: f64) -> Self {
        let start = SplitPoint::ones_start(n);
        AdmmState {
            w: start.clone(),
            y: start,
            lambda: DVector::zeros(3 * n),
            rho,
            k: 0,
        }
    }
}

/// `h(w) = f_Q(x+ - x-) + gamma * sum(1 - xi)`.
pub fn h_value(p: &Problem, w: &SplitPoint) -> f64 {
    let penalty: f64 = w.xi().iter().map(|v| 1.0 - v).sum();
    p.f_quadratic(&w.x()) + p.gamma() * penalty
}

/// `p(y) = g(y+ - y-)`.
pub fn p_value(p: &Problem, y: &SplitPoint) -> f64 {
    p.g_value(&y.x())
}

/// Augmented Lagrangian `h(w) + p(y) + lambda'(w - y) + (rho/2)||w - y||^2`.
pub fn lyapunov_l(p: &Problem, w: &SplitPoint, y: &SplitPoint, lambda: &DVector<f64>, rho: f64) -> f64 {
    let r = w.stacked() - y.stacked();
    h_value(p, w) + p_value(p, y) + lambda.dot(&r) + 0.5 * rho * r.norm_squared()
}

/// `h(w) + p(y) + (1 - rho alpha) lambda'(w - y - alpha lambda) + (rho/2)||w - y||^2`.
pub fn perturbed_lagrangian(
    p: &Problem,
    w: &SplitPoint,
    y: &SplitPoint,
    lambda: &DVector<f64>,
    rho: f64,
    alpha: f64,
) -> f64 {
    let r = w.stacked() - y.stacked();
    let shifted = &r - lambda * alpha;
    h_value(p, w)
        + p_value(p, y)
        + (1.0 - rho * alpha) * lambda.dot(&shifted)
        + 0.5 * rho * r.norm_squared()
}

/// Merit function of the perturbed scheme:
/// `L~ + ((1 - rho alpha) alpha / 2)||lambda||^2
///   + tau ((1 - rho alpha) / (2 rho))||lambda - prev_lambda||^2`.
pub fn lyapunov_p(
    p: &Problem,
    state: &AdmmState,
    prev_lambda: &DVector<f64>,
    tau: f64,
    alpha: f64,
) -> f64 {
    let rho = state.rho;
    let shrink = 1.0 - rho * alpha;
    perturbed_lagrangian(p, &state.w, &state.y, &state.lambda, rho, alpha)
        + 0.5 * shrink * alpha * state.lambda.norm_squared()
        + tau * shrink / (2.0 * rho) * (&state.lambda - prev_lambda).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    MaxTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AdmmCf,
    Perturbed,
}

/// One iteration, producing iterate `k` from iterate `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Penalty used in this iteration.
    pub rho: f64,
    pub rho_next: f64,
    /// `||w_k - y_k||`.
    pub primal_res: f64,
    /// `rho ||y_k - y_{k-1}||`, plus `mu (w_k - w_{k-1})` inside the norm for
    /// the perturbed scheme.
    pub dual_res: f64,
    pub dlambda: f64,
    pub dy: f64,
    pub dw: f64,
    /// Augmented Lagrangian at the new iterate with `rho_next`.
    #[serde(rename = "L")]
    pub lagrangian: f64,
    #[serde(rename = "P_tau", skip_serializing_if = "Option::is_none", default)]
    pub p_tau: Option<f64>,
    /// Whether the penalty-increase inequality held.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trigger: Option<bool>,
    /// `||w_k - y_k - alpha lambda_k||`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feasibility_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prox_weight: Option<f64>,
    pub inner_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t_wall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub variant: Variant,
    pub records: Vec<IterationRecord>,
    pub initial_state: AdmmState,
    /// Augmented Lagrangian at the initial state.
    pub initial_lagrangian: f64,
    pub previous_state: AdmmState,
    pub final_state: AdmmState,
    pub termination: Termination,
    pub rho_hit_max: bool,
    /// Running minimum of `||lambda_k||` over the run.
    pub min_lambda_norm: f64,
    /// Best `f(y+ - y-) + gamma ||y+ - y-||_0` seen over the iterates.
    pub best_objective: f64,
    pub best_x: DVector<f64>,
    pub wall_time: f64,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Point and objective reported for the run, excluding the problem's
    /// constant offset.
    ///
    /// The closed-form scheme reports the final `y`: when converged the penalty
    /// is counted through `xi` as `gamma (n - sum xi)`, otherwise through
    /// `||y+ - y-||_0`. The perturbed scheme reports the best iterate seen.
    pub fn reported(&self, p: &Problem) -> (DVector<f64>, f64) {
        match self.variant {
            Variant::AdmmCf => {
                let y = &self.final_state.y;
                let x = y.x();
                let penalty = if self.converged() {
                    p.n() as f64 - y.xi().sum()
                } else {
                    cardinality(&x) as f64
                };
                let value = p.smooth_value(&x) + p.gamma() * penalty;
                (x, value)
            }
            Variant::Perturbed => (self.best_x.clone(), self.best_objective),
        }
    }
}

fn l0_value(p: &Problem, x: &DVector<f64>) -> f64 {
    p.smooth_value(x) + p.gamma() * cardinality(x) as f64
}

struct Clock {
    start: Instant,
    limit: Option<f64>,
}

impl Clock {
    fn new(limit: Option<f64>) -> Self {
        Clock {
            start: Instant::now(),
            limit,
        }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn expired(&self) -> bool {
        self.limit.is_some_and(|t| self.elapsed() >= t)
    }
}

pub fn run_admm_cf(p: &Problem, opts: &AdmmOptions) -> Result<SolveTrace> {
    let f = factorize(p.m())?;
    opts.validate(f.min_valid_rho())?;
    admm_cf_loop(p, &f, opts, AdmmState::initial(p.n(), opts.rho0))
}

pub(crate) fn admm_cf_loop(
    p: &Problem,
    f: &SpectralFactorization,
    opts: &AdmmOptions,
    start: AdmmState,
) -> Result<SolveTrace> {
    let clock = Clock::new(opts.max_time);
    let initial_lagrangian = lyapunov_l(p, &start.w, &start.y, &start.lambda, start.rho);
    let mut state = start.clone();
    let mut previous = start.clone();
    let mut records = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut rho_hit_max = false;
    let mut min_lambda_norm = state.lambda.norm();
    let mut best_x = state.y.x();
    let mut best_objective = l0_value(p, &best_x);

    for k in 1..=opts.max_iter {
        if clock.expired() {
            termination = Termination::MaxTime;
            break;
        }
        let rho = state.rho;
        let h = build_h(p, &state.y, &state.lambda, rho).map_err(|e| e.at_iteration(k))?;
        let w = solve_from_h(f, &h, rho, opts.tie_break).map_err(|e| e.at_iteration(k))?;
        let inner = solve_y(p, &w, &state.lambda, rho, &opts.inner).map_err(|e| e.at_iteration(k))?;
        let y = inner.y;

        let r = w.stacked() - y.stacked();
        let lambda = &state.lambda + &r * rho;
        let dy = (y.stacked() - state.y.stacked()).norm();
        let dw = (w.stacked() - state.w.stacked()).norm();
        let dlambda = (&lambda - &state.lambda).norm();
        let primal_res = r.norm();
        let dual_res = rho * dy;
        let trigger = penalty_trigger(rho, opts.delta, dy, dlambda);
        let rho_next = penalty_update(rho, dy, dlambda, opts);
        rho_hit_max |= rho > opts.rho_max;
        let lagrangian = lyapunov_l(p, &w, &y, &lambda, rho_next);

        let x = y.x();
        let value = l0_value(p, &x);
        if value < best_objective {
            best_objective = value;
            best_x = x;
        }
        min_lambda_norm = min_lambda_norm.min(lambda.norm());
        records.push(IterationRecord {
            k,
            rho,
            rho_next,
            primal_res,
            dual_res,
            dlambda,
            dy,
            dw,
            lagrangian,
            p_tau: None,
            trigger: Some(trigger),
            feasibility_gap: None,
            alpha: None,
            prox_weight: None,
            inner_residual: inner.residual,
            t_wall: opts.record_time.then(|| clock.elapsed()),
        });
        previous = std::mem::replace(
            &mut state,
            AdmmState {
                w,
                y,
                lambda,
                rho: rho_next,
                k,
            },
        );
        if k % 1000 == 0 {
            debug!("admm-cf k={k} primal={primal_res:e} dual={dual_res:e} rho={rho}");
        }
        if primal_res.max(dual_res) < opts.eps {
            termination = Termination::Converged;
            break;
        }
    }
    info!(
        "admm-cf finished after {} iterations: {:?}",
        records.len(),
        termination
    );
    Ok(SolveTrace {
        variant: Variant::AdmmCf,
        records,
        initial_state: start,
        initial_lagrangian,
        previous_state: previous,
        final_state: state,
        termination,
        rho_hit_max,
        min_lambda_norm,
        best_objective,
        best_x,
        wall_time: clock.elapsed(),
    })
}

pub fn run_perturbed_admm(p: &Problem, opts: &PerturbedOptions) -> Result<SolveTrace> {
    let f = factorize(p.m())?;
    opts.validate(f.min_valid_rho())?;
    perturbed_loop(p, &f, opts, AdmmState::initial(p.n(), opts.rho))
}

pub(crate) fn perturbed_loop(
    p: &Problem,
    f: &SpectralFactorization,
    opts: &PerturbedOptions,
    start: AdmmState,
) -> Result<SolveTrace> {
    let clock = Clock::new(opts.max_time);
    let (mut alpha, mut rho, mut mu) = (opts.alpha, opts.rho, opts.prox_weight);
    let mut state = AdmmState { rho, ..start.clone() };
    let initial_lagrangian = lyapunov_l(p, &state.w, &state.y, &state.lambda, rho);
    let mut previous = state.clone();
    let mut records = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut min_lambda_norm = state.lambda.norm();
    let mut best_x = state.y.x();
    let mut best_objective = l0_value(p, &best_x);

    for k in 1..=opts.max_iter {
        if clock.expired() {
            termination = Termination::MaxTime;
            break;
        }
        let shrink = 1.0 - rho * alpha;
        let damped = &state.lambda * shrink;
        let mut h = build_h(p, &state.y, &damped, rho).map_err(|e| e.at_iteration(k))?;
        if mu != 0.0 {
            h -= state.w.stacked() * mu;
        }
        let w = solve_from_h(f, &h, rho + mu, opts.tie_break).map_err(|e| e.at_iteration(k))?;
        let inner = solve_y(p, &w, &damped, rho, &opts.inner).map_err(|e| e.at_iteration(k))?;
        let y = inner.y;

        let r = w.stacked() - y.stacked();
        let lambda = &damped + &r * rho;
        let dy_vec = y.stacked() - state.y.stacked();
        let dw_vec = w.stacked() - state.w.stacked();
        let dlambda = (&lambda - &state.lambda).norm();
        let primal_res = r.norm();
        let dual_res = (&dy_vec * rho + &dw_vec * mu).norm();
        let gap = (&r - &lambda * alpha).norm();
        let new_state = AdmmState {
            w,
            y,
            lambda,
            rho,
            k,
        };
        let p_tau = lyapunov_p(p, &new_state, &state.lambda, opts.tau, alpha);
        let lagrangian = perturbed_lagrangian(p, &new_state.w, &new_state.y, &new_state.lambda, rho, alpha);

        let x = new_state.y.x();
        let value = l0_value(p, &x);
        if value < best_objective {
            best_objective = value;
            best_x = x;
        }
        min_lambda_norm = min_lambda_norm.min(new_state.lambda.norm());
        records.push(IterationRecord {
            k,
            rho,
            rho_next: rho,
            primal_res,
            dual_res,
            dlambda,
            dy: dy_vec.norm(),
            dw: dw_vec.norm(),
            lagrangian,
            p_tau: Some(p_tau),
            trigger: None,
            feasibility_gap: Some(gap),
            alpha: Some(alpha),
            prox_weight: Some(mu),
            inner_residual: inner.residual,
            t_wall: opts.record_time.then(|| clock.elapsed()),
        });
        previous = std::mem::replace(&mut state, new_state);

        if gap.max(dual_res) < opts.eps {
            termination = Termination::Converged;
            break;
        }
        if let Some(s) = &opts.schedule {
            if alpha > s.alpha_min {
                alpha /= s.factor;
                rho *= s.factor;
                mu *= s.factor;
                state.rho = rho;
                if let Some(last) = records.last_mut() {
                    last.rho_next = rho;
                }
            }
        }
    }
    info!(
        "perturbed admm finished after {} iterations: {:?}",
        records.len(),
        termination
    );
    Ok(SolveTrace {
        variant: Variant::Perturbed,
        records,
        initial_state: start,
        initial_lagrangian,
        previous_state: previous,
        final_state: state,
        termination,
        rho_hit_max: false,
        min_lambda_norm,
        best_objective,
        best_x,
        wall_time: clock.elapsed(),
    })
}

/// Iterations that break one of the two augmented-Lagrangian inequalities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescentAudit {
    /// One-step bound
    /// `dL <= (1/rho_k + (rho_{k+1} - rho_k)/(2 rho_k^2))||dlambda||^2 - (rho_k/2)||dy||^2`,
    /// checked at every iteration.
    pub one_step_violations: Vec<usize>,
    /// `dL <= -(delta/2)||dy||^2`, checked where the penalty test was false.
    pub descent_violations: Vec<usize>,
    pub descent_checked: usize,
    /// First iteration after the last penalty change.
    pub frozen_from: usize,
}

pub fn audit_descent(trace: &SolveTrace, delta: f64) -> DescentAudit {
    let mut audit = DescentAudit::default();
    let mut prev_l = trace.initial_lagrangian;
    for rec in &trace.records {
        let tol = 1e-8 * (1.0 + prev_l.abs());
        let dl = rec.lagrangian - prev_l;
        let bound = (1.0 / rec.rho + (rec.rho_next - rec.rho) / (2.0 * rec.rho * rec.rho))
            * rec.dlambda
            * rec.dlambda
            - 0.5 * rec.rho * rec.dy * rec.dy;
        if dl > bound + tol {
            audit.one_step_violations.push(rec.k);
        }
        if rec.trigger == Some(false) {
            audit.descent_checked += 1;
            if dl > -0.5 * delta * rec.dy * rec.dy + tol {
                audit.descent_violations.push(rec.k);
            }
        }
        if rec.rho_next != rec.rho {
            audit.frozen_from = rec.k + 1;
        }
        prev_l = rec.lagrangian;
    }
    audit
}

/// Iterations `k >= 2` where the perturbed merit value increased.
pub fn audit_lyapunov(trace: &SolveTrace) -> Vec<usize> {
    trace
        .records
        .windows(2)
        .filter_map(|pair| {
            let (a, b) = (pair[0].p_tau?, pair[1].p_tau?);
            (b > a + 1e-8 * (1.0 + a.abs())).then_some(pair[1].k)
        })
        .collect()
}

/// A lower bound on `h(w) + p(y) + (rho/2)||w - y||^2` over `Z1 x Z2`:
/// the unconstrained minima of `f_Q` and `g`, less `n gamma^2 / (2 rho)` for
/// the selection variables. Requires `M` and `P` positive semidefinite with
/// the linear terms in their ranges; returns `None` otherwise.
pub fn merit_lower_bound(p: &Problem, rho: f64) -> Option<f64> {
    let fq = quadratic_minimum(&(p.m() * 2.0), p.lin())?;
    let g = match p.g_quad() {
        Some(g) => quadratic_minimum(&g.p, &g.c)?,
        None => 0.0,
    };
    Some(fq + g - p.n() as f64 * p.gamma() * p.gamma() / (2.0 * rho))
}

/// `min 0.5 x'Hx + c'x`, or `None` when unbounded below.
fn quadratic_minimum(h: &nalgebra::DMatrix<f64>, c: &DVector<f64>) -> Option<f64> {
    let eig = h.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let coeffs = eig.eigenvectors.tr_mul(c);
    let mut value = 0.0;
    for (i, &s) in eig.eigenvalues.iter().enumerate() {
        if s < -1e-10 * scale {
            return None;
        }
        if s <= 1e-10 * scale {
            if coeffs[i].abs() > 1e-8 * (1.0 + c.norm()) {
                return None;
            }
        } else {
            value -= coeffs[i] * coeffs[i] / (2.0 * s);
        }
    }
    Some(value)
}

/// Right-hand side of the limit feasibility bound for the epsilon schedule:
/// `8 (h(w0) + p(y0) + (3 eps/16)||lambda0||^2 - L_lower) eps`.
pub fn feasibility_bound(p: &Problem, start: &AdmmState, eps: f64, lower: f64) -> f64 {
    8.0 * (h_value(p, &start.w) + p_value(p, &start.y)
        + 3.0 * eps / 16.0 * start.lambda.norm_squared()
        - lower)
        * eps
}
