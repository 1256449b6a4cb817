#![allow(dead_code)]

use implied_corr::corr::factor_quadratic_form;
use implied_corr::nicm::project_omega;
use implied_corr::{assemble_correlation, CorrMatrix, FactorLoadings, MarketSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Loadings with a positive first factor, rows inside the unit ball.
pub fn loadings(rng: &mut ChaCha8Rng, n: usize, k: usize) -> FactorLoadings {
    let x = DMatrix::from_fn(n, k, |_, d| {
        if d == 0 {
            rng.gen_range(0.2..0.8)
        } else {
            rng.gen_range(-0.4..0.4)
        }
    });
    project_omega(&FactorLoadings::new(x).unwrap())
}

/// Volatilities in [0.1, 0.6], positive weights, index variance equal to
/// `(1 + markup)` times the variance implied by `x`.
pub fn market(rng: &mut ChaCha8Rng, x: &FactorLoadings, markup: f64) -> MarketSpec {
    let n = x.n();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.6)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let v = DVector::from_iterator(n, sigma.iter().zip(&w).map(|(s, w)| s * w));
    let base = factor_quadratic_form(x.matrix(), &v);
    MarketSpec::single(sigma, w, base * (1.0 + markup)).unwrap()
}

/// `C(x)` with symmetric uniform noise of half-width `eps` off the diagonal.
pub fn noisy_target(rng: &mut ChaCha8Rng, x: &FactorLoadings, eps: f64) -> CorrMatrix {
    let mut a = assemble_correlation(x).into_inner();
    let n = x.n();
    for i in 0..n {
        for j in (i + 1)..n {
            let e = rng.gen_range(-eps..eps);
            a[(i, j)] = (a[(i, j)] + e).clamp(-1.0, 1.0);
            a[(j, i)] = a[(i, j)];
        }
    }
    CorrMatrix::new(a).unwrap()
}

pub fn is_non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    }
}
