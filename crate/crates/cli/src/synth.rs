//! Seeded synthetic markets with a known factor-structured correlation.

use implied_corr::corr::factor_quadratic_form;
use implied_corr::nicm::project_omega;
use implied_corr::{assemble_correlation, CorrMatrix, FactorLoadings, MarketSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::estimate::{estimate_target_matrix, TargetMode, DEFAULT_THETA_MAX};
use crate::snapshot::{MarketSnapshot, NamedLoadings, ReturnWindow};

/// Which matrix the snapshot carries as its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTarget {
    #[default]
    True,
    Historical,
    MeanReverting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n: usize,
    pub k_true: usize,
    /// Relative markup of the index variance over the one implied by `C_true`.
    pub crp: f64,
    pub seed: u64,
    /// Monthly periods of simulated returns.
    pub periods: usize,
    /// Trailing periods used for estimated targets.
    pub window: usize,
    pub target: SynthTarget,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n: 10,
            k_true: 3,
            crp: 0.0,
            seed: 0,
            periods: 120,
            window: 24,
            target: SynthTarget::True,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x_true: FactorLoadings,
    pub c_true: CorrMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub snapshot: MarketSnapshot,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
}

const MAX_ROW_NORM: f64 = 0.95;
const PARETO_SHAPE: f64 = 1.5;

fn names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Loadings with a positive market factor in the first column, rows scaled
/// into a ball of radius 0.95 so every asset keeps idiosyncratic risk.
fn sample_loadings(rng: &mut ChaCha8Rng, n: usize, k: usize) -> FactorLoadings {
    let mut x = DMatrix::from_fn(n, k, |_, d| {
        if d == 0 {
            rng.gen_range(0.2..0.8)
        } else {
            rng.gen_range(-0.4..0.4)
        }
    });
    for mut row in x.row_iter_mut() {
        let norm = row.norm();
        if norm > MAX_ROW_NORM {
            row.scale_mut(MAX_ROW_NORM / norm);
        }
    }
    project_omega(&FactorLoadings::new(x).expect("finite samples"))
}

pub fn generate_synthetic_market(p: &SynthParams) -> CliResult<SyntheticMarket> {
    if p.n < 2 || p.k_true < 1 {
        return Err(CliError::Validation(format!(
            "synthetic market needs n >= 2 and k_true >= 1, got n={} k_true={}",
            p.n, p.k_true
        )));
    }
    if p.periods < 2 || !(2..=p.periods).contains(&p.window) {
        return Err(CliError::Validation(format!(
            "window {} must lie in [2, periods={}]",
            p.window, p.periods
        )));
    }
    if !p.crp.is_finite() || p.crp <= -1.0 {
        return Err(CliError::Validation(format!("crp must exceed -1, got {}", p.crp)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let x_true = sample_loadings(&mut rng, p.n, p.k_true);
    let c_true = assemble_correlation(&x_true);
    let sigma: Vec<f64> = (0..p.n).map(|_| rng.gen_range(0.1..=0.6)).collect();
    let pareto = Pareto::new(1.0, PARETO_SHAPE).expect("valid Pareto parameters");
    let caps: Vec<f64> = (0..p.n).map(|_| rng.sample(pareto)).collect();
    let total: f64 = caps.iter().sum();
    let weights: Vec<f64> = caps.iter().map(|c| c / total).collect();

    let v = DVector::from_iterator(p.n, sigma.iter().zip(&weights).map(|(s, w)| s * w));
    let base = factor_quadratic_form(x_true.matrix(), &v);
    let comonotonic = v.sum().powi(2);
    let mut warnings = Vec::new();
    let mut variance = (1.0 + p.crp) * base;
    if variance > comonotonic {
        warnings.push(format!(
            "index variance {variance} above the comonotonic bound {comonotonic}; clipped"
        ));
        variance = comonotonic;
    }
    let spec = MarketSpec::single(sigma.clone(), weights, variance)?;

    let factors = DMatrix::from_fn(p.periods, p.k_true, |_, _| rng.sample::<f64, _>(StandardNormal));
    let idio = DMatrix::from_fn(p.periods, p.n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let residual_sd: Vec<f64> = x_true
        .row_norms_sq()
        .iter()
        .map(|r| (1.0 - r).max(0.0).sqrt())
        .collect();
    let systematic = &factors * x_true.matrix().transpose();
    let monthly = 12f64.sqrt();
    let assets = DMatrix::from_fn(p.periods, p.n, |t, i| {
        sigma[i] / monthly * (systematic[(t, i)] + residual_sd[i] * idio[(t, i)])
    });

    let target = match p.target {
        SynthTarget::True => c_true.clone(),
        SynthTarget::Historical => {
            estimate_target_matrix(&assets, TargetMode::Historical, p.window, DEFAULT_THETA_MAX, p.seed)?
        }
        SynthTarget::MeanReverting => estimate_target_matrix(
            &assets,
            TargetMode::MeanReverting,
            p.window,
            DEFAULT_THETA_MAX,
            p.seed,
        )?,
    };
    let factor_names = names("F", p.k_true);
    let snapshot = MarketSnapshot {
        date: format!("synthetic-{}", p.seed),
        spec,
        target: Some(target),
        returns: Some(ReturnWindow {
            asset_names: names("A", p.n),
            assets,
            factor_names: factor_names.clone(),
            factors,
        }),
        factor_loadings: Some(NamedLoadings {
            factor_names,
            loadings: x_true.clone(),
        }),
    };
    Ok(SyntheticMarket {
        snapshot,
        truth: GroundTruth { x_true, c_true },
        warnings,
    })
}
