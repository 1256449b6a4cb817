//! Spectral projected gradient with inexact restoration.
//!
//! Each outer iteration restores feasibility, computes a Barzilai-Borwein
//! scaled gradient step projected onto the tangent plane of the market
//! constraint and the ball set, and backtracks until the restored trial
//! point gives an Armijo decrease. Every iterate recorded in the trace is
//! feasible, so the trace is monotone.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corr::{assemble_correlation, factor_quadratic_form, CorrMatrix, FactorLoadings, MarketSpec};
use crate::error::{Error, Result};

use super::objective::{constraint_gradient, objective_and_gradient, objective_value};
use super::projection::{project_rows, restore};
use super::start::{initial_loadings, sorted_eigenpairs};

/// How the marginal objective improvement is compared with `fn_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StoppingRule {
    /// `f_{t-1} - f_t < fn_tol`
    #[default]
    Absolute,
    /// `f_{t-1} - f_t < fn_tol * f_{t-1}`
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub sufficient_decrease: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            sufficient_decrease: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub k: usize,
    pub var_tol: f64,
    pub fn_tol: f64,
    pub stopping: StoppingRule,
    pub max_outer_iter: usize,
    pub max_restoration_iter: usize,
    pub restoration_tol: f64,
    pub line_search: LineSearch,
    pub spectral_step_bounds: [f64; 2],
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 1,
            var_tol: 1e-6,
            fn_tol: 1e-3,
            stopping: StoppingRule::Absolute,
            max_outer_iter: 200,
            max_restoration_iter: 100,
            restoration_tol: 1e-10,
            line_search: LineSearch::default(),
            spectral_step_bounds: [1e-10, 1e10],
        }
    }
}

impl SolverConfig {
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.var_tol > 0.0 && self.fn_tol > 0.0 && self.restoration_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        let ls = &self.line_search;
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return bad("sufficient decrease must lie in (0, 1)");
        }
        if !(ls.backtrack > 0.0 && ls.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        let [lo, hi] = self.spectral_step_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return bad("spectral step bounds must satisfy 0 < min <= max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Objective improvement fell below `fn_tol`.
    SmallImprovement,
    /// No feasible descent direction at the current point.
    Stationary,
    /// Backtracking exhausted without sufficient decrease.
    LineSearchStalled,
    /// `max_outer_iter` reached.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverResult {
    #[serde(skip)]
    pub x_star: FactorLoadings,
    #[serde(skip)]
    pub c_star: CorrMatrix,
    #[serde(rename = "fn")]
    pub fn_value: f64,
    pub fn_trace: Vec<f64>,
    pub constraint_residual: f64,
    pub outer_iterations: usize,
    pub restorations: usize,
    #[serde(serialize_with = "serialize_secs")]
    pub wall_time: Duration,
    pub converged: bool,
    pub termination: Termination,
    /// Common factor applied to the volatilities while solving (1 if none).
    pub vol_scale: f64,
}

fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Power-of-two factor bringing every `|v_i|` below one.
pub(crate) fn vol_scale_for(v: &DVector<f64>) -> f64 {
    let vmax = v.amax();
    if vmax < 1.0 {
        1.0
    } else {
        let e = vmax.log2().floor() as i32 + 1;
        2f64.powi(-e)
    }
}

/// Relative size of the nudge given to zero starting columns.
const START_NUDGE: f64 = 1e-2;

/// Starting loadings with zero columns nudged off the origin. A zero column
/// receives no gradient (every first-order term is linear in it), so it would
/// stay zero for the whole run. Zero columns take a small multiple of their
/// eigenvector; if every column is zero the first one is filled with a
/// constant so the constraint has a direction to act on.
pub(crate) fn starting_point(a: &CorrMatrix, k: usize) -> Result<DMatrix<f64>> {
    let mut x0 = initial_loadings(a, k)?.into_inner();
    let all_zero = x0.iter().all(|v| *v == 0.0);
    let pairs = sorted_eigenpairs(a.matrix());
    let kf = k as f64;
    for (d, (_, e)) in pairs.iter().take(k).enumerate() {
        if x0.column(d).iter().any(|v| *v != 0.0) {
            continue;
        }
        if all_zero && d == 0 {
            x0.column_mut(0).fill(START_NUDGE / kf.sqrt());
            continue;
        }
        let max_abs = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let scale = START_NUDGE / (kf.sqrt() * max_abs);
        for (i, v) in e.iter().enumerate() {
            x0[(i, d)] = scale * v;
        }
    }
    Ok(x0)
}

struct Problem<'a> {
    v: DVector<f64>,
    target: f64,
    config: &'a SolverConfig,
}

impl Problem<'_> {
    fn restore(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
        let r = restore(
            x,
            &self.v,
            self.target,
            self.config.restoration_tol,
            self.config.max_restoration_iter,
        )?;
        Ok((r.point, r.iterations > 0))
    }

    /// Projected spectral step `P(X - step * grad) - X`, first onto the
    /// tangent plane of the constraint and then the ball set; falls back to
    /// the tangent-only step if the composite is not a descent direction.
    fn direction(&self, x: &DMatrix<f64>, grad: &DMatrix<f64>, step: f64) -> Option<(DMatrix<f64>, f64)> {
        let trial = x - grad * step;
        let normal = constraint_gradient(&self.v, x);
        let nn = normal.norm_squared();
        let tangent = if nn > 0.0 {
            let offset = (&trial - x).dot(&normal) / nn;
            &trial - &normal * offset
        } else {
            trial
        };
        let d = project_rows(&tangent) - x;
        let slope = grad.dot(&d);
        if slope < 0.0 {
            return Some((d, slope));
        }
        let d = tangent - x;
        let slope = grad.dot(&d);
        (slope < 0.0).then_some((d, slope))
    }
}

/// Nearest factor-structured correlation matrix to `a` that matches the
/// single market constraint of `spec`.
pub fn solve_nicm(a: &CorrMatrix, spec: &MarketSpec, config: &SolverConfig) -> Result<SolverResult> {
    let started = Instant::now();
    config.validate()?;
    let constraint = spec.sole_constraint()?;
    if a.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "target matrix",
            expected: spec.n(),
            actual: a.n(),
        });
    }
    let mut v = spec.scaled_weights(0)?;
    let vol_scale = vol_scale_for(&v);
    v *= vol_scale;
    let target = constraint.variance() * vol_scale * vol_scale;
    let a_hat = a.off_diagonal();
    let problem = Problem {
        v,
        target,
        config,
    };

    let x0 = starting_point(a, config.k)?;
    let (mut x, moved) = problem.restore(&x0)?;
    let mut restorations = usize::from(moved);
    let (mut f, mut grad) = objective_and_gradient(&x, &a_hat);
    let mut trace = vec![f];

    let [step_min, step_max] = config.spectral_step_bounds;
    let pg = project_rows(&(&x - &grad)) - &x;
    let pg_inf = pg.amax();
    let mut step = if pg_inf > 0.0 {
        (1.0 / pg_inf).clamp(step_min, step_max)
    } else {
        step_max
    };

    let ls = &config.line_search;
    let mut termination = Termination::IterationLimit;
    let mut iterations = 0;
    while iterations < config.max_outer_iter {
        let Some((d, slope)) = problem.direction(&x, &grad, step) else {
            termination = Termination::Stationary;
            break;
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let trial = &x + &d * t;
            if let Ok((restored, moved)) = problem.restore(&trial) {
                let f_new = objective_value(&restored, &a_hat);
                if f_new <= f + ls.sufficient_decrease * t * slope {
                    accepted = Some((restored, f_new, moved));
                    break;
                }
            }
            t *= ls.backtrack;
        }
        let Some((x_new, f_new, moved)) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        restorations += usize::from(moved);
        let (_, grad_new) = objective_and_gradient(&x_new, &a_hat);
        let s = &x_new - &x;
        let y = &grad_new - &grad;
        let sy = s.dot(&y);
        step = if sy <= 0.0 {
            step_max
        } else {
            (s.norm_squared() / sy).clamp(step_min, step_max)
        };
        let improvement = f - f_new;
        let threshold = match config.stopping {
            StoppingRule::Absolute => config.fn_tol,
            StoppingRule::Relative => config.fn_tol * f,
        };
        x = x_new;
        f = f_new;
        grad = grad_new;
        trace.push(f);
        iterations += 1;
        if improvement < threshold {
            termination = Termination::SmallImprovement;
            break;
        }
    }

    let residual = (target - factor_quadratic_form(&x, &problem.v)) / (vol_scale * vol_scale);
    let x_star = FactorLoadings::new(x)?;
    let c_star = assemble_correlation(&x_star);
    let converged = termination != Termination::IterationLimit && residual.abs() <= config.var_tol;
    Ok(SolverResult {
        x_star,
        c_star,
        fn_value: f,
        fn_trace: trace,
        constraint_residual: residual,
        outer_iterations: iterations,
        restorations,
        wall_time: started.elapsed(),
        converged,
        termination,
        vol_scale,
    })
}
