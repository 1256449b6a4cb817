//! Slow augmented-Lagrangian solver used to cross-check the spectral solver
//! on small instances. It evaluates the objective and the constraint with
//! plain double loops and differentiates them numerically, so it shares no
//! gradient code with the main solver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::corr::{assemble_correlation, CorrMatrix, FactorLoadings, MarketSpec};
use crate::error::{Error, Result};

use super::solver::{starting_point, SolverConfig, SolverResult, Termination};

const MAX_OUTER: usize = 60;
const MAX_INNER: usize = 4000;

fn naive_objective(x: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut c = 0.0;
                for d in 0..x.ncols() {
                    c += x[(i, d)] * x[(j, d)];
                }
                s += (c - a[(i, j)]).powi(2);
            }
        }
    }
    s
}

fn naive_residual(x: &DMatrix<f64>, v: &DVector<f64>, target: f64) -> f64 {
    let n = x.nrows();
    let mut agg = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = if i == j {
                1.0
            } else {
                (0..x.ncols()).map(|d| x[(i, d)] * x[(j, d)]).sum()
            };
            agg += v[i] * v[j] * c;
        }
    }
    target - agg
}

fn clamp_rows(x: &mut DMatrix<f64>) {
    for i in 0..x.nrows() {
        let norm = x.row(i).norm();
        if norm > 1.0 {
            x.row_mut(i).unscale_mut(norm);
        }
    }
}

fn numeric_gradient(phi: &dyn Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = x[idx];
        let h = 1e-6 * (1.0 + orig.abs());
        probe[idx] = orig + h;
        let up = phi(&probe);
        probe[idx] = orig - h;
        let down = phi(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Projected gradient descent on the ball set with Armijo backtracking.
fn minimize_on_ball(phi: &dyn Fn(&DMatrix<f64>) -> f64, mut x: DMatrix<f64>) -> DMatrix<f64> {
    let mut fx = phi(&x);
    let mut step = 1.0;
    for _ in 0..MAX_INNER {
        let g = numeric_gradient(phi, &x);
        let mut accepted = false;
        let mut t = step;
        for _ in 0..60 {
            let mut trial = &x - &g * t;
            clamp_rows(&mut trial);
            let ft = phi(&trial);
            let d = &trial - &x;
            if ft <= fx - 1e-4 * d.norm_squared() / t {
                let moved = d.norm();
                x = trial;
                fx = ft;
                accepted = true;
                step = (t * 2.0).min(1e3);
                if moved <= 1e-13 {
                    return x;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Augmented-Lagrangian reference solve of the same nearness problem,
/// intended for `n` up to about 25.
pub fn reference_solve(
    a: &CorrMatrix,
    spec: &MarketSpec,
    k: usize,
    config: &SolverConfig,
) -> Result<SolverResult> {
    let started = Instant::now();
    let constraint = spec.sole_constraint()?;
    if a.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "target matrix",
            expected: spec.n(),
            actual: a.n(),
        });
    }
    let v = spec.scaled_weights(0)?;
    let target = constraint.variance();
    let a_full = a.matrix().clone();

    let mut x = starting_point(a, k)?;
    clamp_rows(&mut x);
    let mut mu = 0.0;
    let mut rho = 10.0 / v.norm_squared().max(1e-12);
    let mut g_prev = f64::INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_OUTER {
        iterations += 1;
        let phi = |y: &DMatrix<f64>| {
            let g = naive_residual(y, &v, target);
            naive_objective(y, &a_full) - mu * g + 0.5 * rho * g * g
        };
        x = minimize_on_ball(&phi, x);
        let g = naive_residual(&x, &v, target);
        trace.push(naive_objective(&x, &a_full));
        if g.abs() <= 1e-11 {
            break;
        }
        mu -= rho * g;
        if g.abs() > 0.25 * g_prev {
            rho *= 10.0;
        }
        g_prev = g.abs();
    }

    let residual = naive_residual(&x, &v, target);
    let fn_value = naive_objective(&x, &a_full);
    let x_star = FactorLoadings::new(x)?;
    Ok(SolverResult {
        c_star: assemble_correlation(&x_star),
        x_star,
        fn_value,
        fn_trace: trace,
        constraint_residual: residual,
        outer_iterations: iterations,
        restorations: 0,
        wall_time: started.elapsed(),
        converged: residual.abs() <= config.var_tol,
        termination: Termination::SmallImprovement,
        vol_scale: 1.0,
    })
}
