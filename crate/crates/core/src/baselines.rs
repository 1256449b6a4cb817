//! Closed-form reference models: equicorrelation and the adjusted ex-post
//! blend (with the equicorrelation lower-bound workaround for negative
//! correlation risk premia).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corr::{CorrMatrix, MarketSpec, EPS_FEAS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equicorrelation {
    pub c_bar: f64,
    pub matrix: CorrMatrix,
    /// `-1/(n-1) <= c_bar <= 1`, the PSD range of an equicorrelation matrix.
    pub psd_range: bool,
}

/// Single off-diagonal value matching the market constraint:
/// `c = (sigma_m^2 - w' sigma^2 w) / (w' sigma J sigma w)`.
pub fn equicorrelation(spec: &MarketSpec) -> Result<Equicorrelation> {
    let n = spec.n();
    if n < 2 {
        return Err(Error::Degenerate("equicorrelation needs at least two assets".into()));
    }
    let market = spec.market()?;
    let v = spec.scaled_weights(0)?;
    let sum: f64 = v.iter().sum();
    let sum_sq = v.norm_squared();
    let denom = sum * sum - sum_sq;
    if denom == 0.0 {
        return Err(Error::Degenerate(
            "w' sigma J sigma w is zero (single-asset weighting)".into(),
        ));
    }
    let c_bar = (market.variance() - sum_sq) / denom;
    let lower = -1.0 / (n as f64 - 1.0);
    Ok(Equicorrelation {
        c_bar,
        matrix: CorrMatrix::equicorrelation(n, c_bar),
        psd_range: (lower..=1.0).contains(&c_bar),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Self {
        if x > 0.0 {
            Sign::Positive
        } else if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Zero => 0.0,
            Sign::Positive => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedExPost {
    /// Weight on the blend target (all-ones or the lower bound `L`).
    pub alpha_hat: f64,
    pub matrix: CorrMatrix,
    /// The lower-bound `L` branch was used (negative premium).
    pub used_lower_bound: bool,
    pub crp_sign: Sign,
    /// All entries of the blended matrix lie in `[-1, 1]`.
    pub in_bounds: bool,
}

/// Equicorrelation lower bound: `-1/(n-1)` off the diagonal.
pub fn lower_bound_matrix(n: usize) -> DMatrix<f64> {
    let off = if n > 1 { -1.0 / (n as f64 - 1.0) } else { 0.0 };
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { off })
}

/// Calibrates `C_Q = a B + (1 - a) C_P` to the market constraint, where `B`
/// is the all-ones matrix for a nonnegative premium and the lower bound `L`
/// otherwise. The constraint is affine in `a`, so
/// `a = (sigma_m^2 - s_P) / (s_B - s_P)` with `s_M = v'Mv`.
///
/// Entries outside `[-1, 1]` are reported through `in_bounds`, never clipped.
pub fn adjusted_ex_post(prior: &CorrMatrix, spec: &MarketSpec) -> Result<AdjustedExPost> {
    let n = spec.n();
    if prior.n() != n {
        return Err(Error::DimensionMismatch {
            context: "adjusted ex-post prior",
            expected: n,
            actual: prior.n(),
        });
    }
    let target = spec.market()?.variance();
    let v = spec.scaled_weights(0)?;
    let s_p = v.dot(&(prior.matrix() * &v));
    let crp = target - s_p;
    let crp_sign = Sign::of(crp);
    let used_lower_bound = crp < 0.0;
    let blend = if used_lower_bound {
        lower_bound_matrix(n)
    } else {
        DMatrix::from_element(n, n, 1.0)
    };
    let alpha_hat = if crp == 0.0 {
        0.0
    } else {
        let s_b = v.dot(&(&blend * &v));
        if s_b == s_p {
            return Err(Error::Degenerate(
                "blend target and prior aggregate to the same variance".into(),
            ));
        }
        crp / (s_b - s_p)
    };
    let mut m = blend * alpha_hat + prior.matrix() * (1.0 - alpha_hat);
    m.fill_diagonal(1.0);
    let in_bounds = m.iter().all(|c| c.abs() <= 1.0 + EPS_FEAS);
    Ok(AdjustedExPost {
        alpha_hat,
        matrix: CorrMatrix::new(m)?,
        used_lower_bound,
        crp_sign,
        in_bounds,
    })
}

/// Sufficient condition for the weighted-average blend toward the all-ones
/// matrix to stay PSD: `alpha_hat` in `[0, 1)`. Not necessary; use
/// [`crate::check_feasibility`] for a verdict.
pub fn is_psd_weighted_average(alpha_hat: f64) -> bool {
    (0.0..1.0).contains(&alpha_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{assemble_correlation, portfolio_variance, FactorLoadings};
    use approx::assert_abs_diff_eq;

    fn two_asset(variance: f64) -> MarketSpec {
        MarketSpec::single(vec![0.2, 0.2], vec![0.5, 0.5], variance).unwrap()
    }

    #[test]
    fn equicorrelation_hand_values() {
        let ulps = 4.0 * f64::EPSILON;
        assert_abs_diff_eq!(equicorrelation(&two_asset(0.04)).unwrap().c_bar, 1.0, epsilon = ulps);
        assert_abs_diff_eq!(equicorrelation(&two_asset(0.02)).unwrap().c_bar, 0.0, epsilon = ulps);
        let e = equicorrelation(&two_asset(0.03)).unwrap();
        assert_abs_diff_eq!(e.c_bar, 0.5, epsilon = ulps);
        assert!(e.psd_range);
        let spec = two_asset(0.03);
        let back = portfolio_variance(&e.matrix, &spec, 0).unwrap();
        assert_abs_diff_eq!(back, 0.03, epsilon = 1e-12);
    }

    #[test]
    fn equicorrelation_degenerate_weighting() {
        let spec = MarketSpec::single(vec![0.2, 0.3], vec![1.0, 0.0], 0.04).unwrap();
        assert!(matches!(equicorrelation(&spec), Err(Error::Degenerate(_))));
    }

    #[test]
    fn equicorrelation_flags_out_of_range() {
        // sigma_m^2 above the comonotonic bound forces c_bar > 1
        let e = equicorrelation(&two_asset(0.05)).unwrap();
        assert!(e.c_bar > 1.0);
        assert!(!e.psd_range);
    }

    #[test]
    fn zero_premium_leaves_prior_unchanged() {
        let x = FactorLoadings::from_rows(&[&[0.5], &[0.3], &[-0.2]]).unwrap();
        let prior = assemble_correlation(&x);
        let spec0 = MarketSpec::single(vec![0.2, 0.3, 0.25], vec![0.3, 0.3, 0.4], 1.0).unwrap();
        let s_p = portfolio_variance(&prior, &spec0, 0).unwrap();
        let spec = spec0.with_variance(0, s_p).unwrap();
        let r = adjusted_ex_post(&prior, &spec).unwrap();
        assert_eq!(r.alpha_hat, 0.0);
        assert_eq!(r.crp_sign, Sign::Zero);
        assert_eq!(r.matrix, prior);
    }

    #[test]
    fn identity_prior_interpolates_toward_ones() {
        let r = adjusted_ex_post(&CorrMatrix::identity(2), &two_asset(0.03)).unwrap();
        assert_abs_diff_eq!(r.alpha_hat, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.matrix.get(0, 1), 0.5, epsilon = 1e-15);
        assert!(!r.used_lower_bound);
        assert_eq!(r.crp_sign, Sign::Positive);
    }

    #[test]
    fn negative_premium_uses_lower_bound() {
        let x = FactorLoadings::from_rows(&[&[0.8], &[0.7], &[0.6]]).unwrap();
        let prior = assemble_correlation(&x);
        let spec0 = MarketSpec::single(vec![0.2, 0.3, 0.25], vec![0.3, 0.3, 0.4], 1.0).unwrap();
        let s_p = portfolio_variance(&prior, &spec0, 0).unwrap();
        let spec = spec0.with_variance(0, 0.8 * s_p).unwrap();
        let r = adjusted_ex_post(&prior, &spec).unwrap();
        assert!(r.used_lower_bound);
        assert_eq!(r.crp_sign, Sign::Negative);
        assert!(r.alpha_hat > 0.0);
        let back = portfolio_variance(&r.matrix, &spec, 0).unwrap();
        assert_abs_diff_eq!(back, 0.8 * s_p, epsilon = 1e-12);
        // entries pulled toward -1/2
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(r.matrix.get(i, j) < prior.get(i, j));
            assert!(r.matrix.get(i, j) > -0.5);
        }
    }

    #[test]
    fn lower_bound_branch_scales_by_sign() {
        // mixed-sign prior: negative pairs move up, positive pairs move down
        let x = FactorLoadings::from_rows(&[&[0.8], &[0.7], &[-0.6], &[0.5]]).unwrap();
        let prior = assemble_correlation(&x);
        let spec0 =
            MarketSpec::single(vec![0.2, 0.3, 0.25, 0.4], vec![0.3, 0.3, 0.2, 0.2], 1.0).unwrap();
        let s_p = portfolio_variance(&prior, &spec0, 0).unwrap();
        let spec = spec0.with_variance(0, 0.9 * s_p).unwrap();
        let r = adjusted_ex_post(&prior, &spec).unwrap();
        assert!(r.used_lower_bound);
        let floor = -1.0 / 3.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let p = prior.get(i, j);
                let q = r.matrix.get(i, j);
                if p < floor {
                    assert!(q > p, "negative pair ({i},{j}) should be up-scaled");
                } else {
                    assert!(q < p, "positive pair ({i},{j}) should be down-scaled");
                }
            }
        }
    }

    #[test]
    fn weighted_average_condition() {
        assert!(is_psd_weighted_average(0.3));
        assert!(!is_psd_weighted_average(-0.2));
        assert!(is_psd_weighted_average(0.0));
    }
}
