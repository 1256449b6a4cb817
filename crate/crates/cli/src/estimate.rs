//! Correlation estimates from return histories.

use implied_corr::{CorrMatrix, FactorLoadings};
use nalgebra::{DMatrix, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Pearson correlations over the window.
    Historical,
    /// Per pair `theta rho_window + (1 - theta) rho_full` with `theta ~ U(0, theta_max)`.
    MeanReverting,
}

pub const DEFAULT_THETA_MAX: f64 = 0.4;

/// Sample correlation; `None` when either series is constant.
pub fn pearson(a: DVectorView<f64>, b: DVectorView<f64>) -> Option<f64> {
    let constant = |v: &DVectorView<f64>| v.iter().all(|x| *x == v[0]);
    if constant(&a) || constant(&b) {
        return None;
    }
    let t = a.len() as f64;
    let (ma, mb) = (a.sum() / t, b.sum() / t);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn tail(m: &DMatrix<f64>, window: usize) -> CliResult<DMatrix<f64>> {
    if window < 2 || window > m.nrows() {
        return Err(CliError::Validation(format!(
            "window of {window} periods needs at least 2 and at most the {} available",
            m.nrows()
        )));
    }
    Ok(m.rows(m.nrows() - window, window).clone_owned())
}

fn correlation_matrix(r: &DMatrix<f64>) -> CliResult<DMatrix<f64>> {
    let n = r.ncols();
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let rho = pearson(r.column(i), r.column(j)).ok_or_else(|| {
                CliError::Validation(format!("correlation of assets ({i}, {j}) undefined: zero variance"))
            })?;
            c[(i, j)] = rho;
            c[(j, i)] = rho;
        }
    }
    Ok(c)
}

/// Target correlation matrix from the last `window` rows of `returns`
/// (`T x n`). The result has unit diagonal and is symmetric, but need not
/// be positive semidefinite in mean-reverting mode.
pub fn estimate_target_matrix(
    returns: &DMatrix<f64>,
    mode: TargetMode,
    window: usize,
    theta_max: f64,
    seed: u64,
) -> CliResult<CorrMatrix> {
    let recent = correlation_matrix(&tail(returns, window)?)?;
    let c = match mode {
        TargetMode::Historical => recent,
        TargetMode::MeanReverting => {
            if !(0.0..=1.0).contains(&theta_max) {
                return Err(CliError::Validation(format!("theta range [0, {theta_max}] outside [0, 1]")));
            }
            let long_run = correlation_matrix(returns)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = returns.ncols();
            let mut c = recent;
            for i in 0..n {
                for j in (i + 1)..n {
                    let theta = rng.gen::<f64>() * theta_max;
                    let rho = theta * c[(i, j)] + (1.0 - theta) * long_run[(i, j)];
                    c[(i, j)] = rho;
                    c[(j, i)] = rho;
                }
            }
            c
        }
    };
    Ok(CorrMatrix::new(c)?)
}

/// `X_P[i, d]`: correlation of asset `i` with factor `d` over the window.
pub fn estimate_factor_correlations(
    assets: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    window: usize,
) -> CliResult<FactorLoadings> {
    if assets.nrows() != factors.nrows() {
        return Err(CliError::Validation(format!(
            "asset returns have {} periods, factor returns {}",
            assets.nrows(),
            factors.nrows()
        )));
    }
    let a = tail(assets, window)?;
    let f = tail(factors, window)?;
    let mut x = DMatrix::zeros(a.ncols(), f.ncols());
    for i in 0..a.ncols() {
        for d in 0..f.ncols() {
            x[(i, d)] = pearson(a.column(i), f.column(d)).ok_or_else(|| {
                CliError::Validation(format!("correlation of asset {i} with factor {d} undefined: zero variance"))
            })?;
        }
    }
    Ok(FactorLoadings::new(x)?)
}
