//! Risk-neutral factor loadings from physically expected factor correlations.
//!
//! The loadings are blended toward `+1` (positive correlation risk premium)
//! or `-1` (negative premium) by a scalar weight solved in closed form so
//! that the market constraint holds:
//! `X_Q = X_P + a (u 1 - X_P)` with `u = sign(CRP)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::Sign;
use crate::corr::{
    assemble_correlation, factor_quadratic_form, CorrMatrix, FactorLoadings, MarketSpec, EPS_FEAS,
};
use crate::error::{Error, Result};

/// When to orthogonalize the physical loadings before calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orthogonalize {
    /// Only when the loadings leave the ball set.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalized {
    pub loadings: FactorLoadings,
    /// Rows rescaled to unit norm after orthogonalization.
    pub rescaled_rows: Vec<usize>,
}

/// Classical Gram-Schmidt over the columns in their given order. Columns are
/// made mutually orthogonal but keep their length scale; rows that end up
/// outside the unit ball are rescaled onto it and reported.
pub fn orthogonalize_loadings(x: &FactorLoadings) -> Result<Orthogonalized> {
    let m = x.matrix();
    let mut q = DMatrix::<f64>::zeros(x.n(), x.k());
    for d in 0..x.k() {
        let col = m.column(d);
        let mut out = col.clone_owned();
        for e in 0..d {
            let qe = q.column(e);
            let coef = col.dot(&qe) / qe.norm_squared();
            out -= qe * coef;
        }
        let scale = col.norm();
        if scale == 0.0 || out.norm() <= 1e-10 * scale {
            return Err(Error::RankDeficient { column: d });
        }
        q.set_column(d, &out);
    }
    let mut rescaled_rows = Vec::new();
    for i in 0..q.nrows() {
        let norm_sq = q.row(i).norm_squared();
        if norm_sq > 1.0 {
            q.row_mut(i).scale_mut(1.0 / norm_sq.sqrt());
            rescaled_rows.push(i);
        }
    }
    Ok(Orthogonalized {
        loadings: FactorLoadings::new(q)?,
        rescaled_rows,
    })
}

/// Sign of the correlation risk premium `sigma_m^2 - w' sigma C(X_P) sigma w`.
pub fn crp_sign(x_p: &FactorLoadings, spec: &MarketSpec) -> Result<Sign> {
    let target = spec.market()?.variance();
    let v = spec.scaled_weights(0)?;
    check_dims(x_p, spec)?;
    Ok(Sign::of(target - factor_quadratic_form(x_p.matrix(), &v)))
}

fn check_dims(x: &FactorLoadings, spec: &MarketSpec) -> Result<()> {
    if x.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "physical loadings",
            expected: spec.n(),
            actual: x.n(),
        });
    }
    Ok(())
}

/// The three aggregated quadratic forms entering the premium weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PremiumScalars {
    /// `w' sigma (X_P X_P' o J + I) sigma w`
    pub sigma_p_sq: f64,
    /// `w' sigma (X_D X_D' o J) sigma w`
    pub sigma_delta_sq: f64,
    /// `w' sigma (X_P X_D' o J) sigma w`
    pub sigma_p_delta_sq: f64,
}

/// `v' (A B' o J) v` for loadings `A`, `B`.
fn cross_form(a: &DMatrix<f64>, b: &DMatrix<f64>, v: &nalgebra::DVector<f64>) -> f64 {
    let ua = a.tr_mul(v);
    let ub = b.tr_mul(v);
    let diag: f64 = (0..a.nrows()).map(|i| v[i] * v[i] * a.row(i).dot(&b.row(i))).sum();
    ua.dot(&ub) - diag
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSolution {
    pub alpha_tilde: f64,
    pub upsilon: Sign,
    pub scalars: PremiumScalars,
}

/// Solves for the premium weight with the sign of the premium picking the root.
pub fn solve_alpha_tilde(x_p: &FactorLoadings, spec: &MarketSpec) -> Result<AlphaSolution> {
    let upsilon = crp_sign(x_p, spec)?;
    solve_alpha_tilde_with_sign(x_p, spec, upsilon)
}

/// Premium weight for an explicit scaling direction `upsilon`:
/// `a = (-s_PD + u sqrt(s_PD^2 - s_D (s_P - sigma_m^2))) / s_D`.
pub fn solve_alpha_tilde_with_sign(
    x_p: &FactorLoadings,
    spec: &MarketSpec,
    upsilon: Sign,
) -> Result<AlphaSolution> {
    check_dims(x_p, spec)?;
    let target = spec.market()?.variance();
    let v = spec.scaled_weights(0)?;
    let xp = x_p.matrix();
    let u = upsilon.as_f64();
    let x_delta = xp.map(|p| u - p);
    let scalars = PremiumScalars {
        sigma_p_sq: factor_quadratic_form(xp, &v),
        sigma_delta_sq: cross_form(&x_delta, &x_delta, &v),
        sigma_p_delta_sq: cross_form(xp, &x_delta, &v),
    };
    if upsilon == Sign::Zero {
        return Ok(AlphaSolution {
            alpha_tilde: 0.0,
            upsilon,
            scalars,
        });
    }
    let PremiumScalars {
        sigma_p_sq: sp,
        sigma_delta_sq: sd,
        sigma_p_delta_sq: spd,
    } = scalars;
    let alpha_tilde = if sd == 0.0 {
        if spd == 0.0 {
            return Err(Error::Degenerate("premium direction does not change the index variance".into()));
        }
        (target - sp) / (2.0 * spd)
    } else {
        let disc = spd * spd - sd * (sp - target);
        if disc < 0.0 {
            return Err(Error::Unreachable { discriminant: disc });
        }
        (-spd + u * disc.sqrt()) / sd
    };
    Ok(AlphaSolution {
        alpha_tilde,
        upsilon,
        scalars,
    })
}

/// `X_Q = X_P + a (u 1 - X_P)`, evaluated as `(1 - a) X_P + a u` so the
/// endpoints `a = 0` and `a = 1` are exact.
pub fn risk_neutral_loadings(x_p: &FactorLoadings, alpha_tilde: f64, upsilon: Sign) -> FactorLoadings {
    let u = upsilon.as_f64();
    FactorLoadings::new(x_p.matrix().map(|p| (1.0 - alpha_tilde) * p + alpha_tilde * u))
        .expect("finite blend of finite loadings")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EconomicResult {
    pub alpha_tilde: f64,
    pub upsilon: Sign,
    #[serde(skip)]
    pub x_q: FactorLoadings,
    #[serde(skip)]
    pub matrix: CorrMatrix,
    pub scalars: PremiumScalars,
    /// Market-constraint residual of the resulting matrix.
    pub constraint_residual: f64,
    pub orthogonalized: bool,
    pub warnings: Vec<String>,
}

/// Orthogonalize (as configured), pick the premium sign, solve the weight,
/// blend the loadings and assemble the implied correlation matrix.
pub fn economic_implied_corr(
    x_p: &FactorLoadings,
    spec: &MarketSpec,
    orthogonalize: Orthogonalize,
) -> Result<EconomicResult> {
    check_dims(x_p, spec)?;
    let mut warnings = Vec::new();
    let run_gs = match orthogonalize {
        Orthogonalize::Always => true,
        Orthogonalize::Never => false,
        Orthogonalize::Auto => !x_p.in_omega(EPS_FEAS),
    };
    let x_p = if run_gs {
        let o = orthogonalize_loadings(x_p)?;
        if !o.rescaled_rows.is_empty() {
            warnings.push(format!(
                "rows {:?} rescaled to unit norm after orthogonalization",
                o.rescaled_rows
            ));
        }
        o.loadings
    } else {
        x_p.clone()
    };
    let AlphaSolution {
        alpha_tilde,
        upsilon,
        scalars,
    } = solve_alpha_tilde(&x_p, spec)?;
    if !(0.0..=1.0).contains(&alpha_tilde) {
        warnings.push(format!("premium weight {alpha_tilde} outside [0, 1]"));
    }
    let x_q = risk_neutral_loadings(&x_p, alpha_tilde, upsilon);
    if !x_q.in_omega(EPS_FEAS) {
        warnings.push("risk-neutral loadings leave the unit-ball set".into());
    }
    let v = spec.scaled_weights(0)?;
    let constraint_residual = spec.market()?.variance() - factor_quadratic_form(x_q.matrix(), &v);
    Ok(EconomicResult {
        alpha_tilde,
        upsilon,
        matrix: assemble_correlation(&x_q),
        x_q,
        scalars,
        constraint_residual,
        orthogonalized: run_gs,
        warnings,
    })
}
