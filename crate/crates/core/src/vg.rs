//! Variance-gamma dependence: conversion between the direct parametrization
//! `(xi, omega, C_dir, theta, nu)` and centered Pearson moments.

use nalgebra::{DMatrix, DVector};

use crate::corr::{CorrMatrix, MarketSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VgParams {
    xi: DVector<f64>,
    omega: DVector<f64>,
    theta: DVector<f64>,
    nu: f64,
    c_dir: Option<CorrMatrix>,
}

impl VgParams {
    /// `omega > 0`, `nu > 0`, all vectors of one length, `c_dir` (when given)
    /// of matching size.
    pub fn new(
        xi: Vec<f64>,
        omega: Vec<f64>,
        theta: Vec<f64>,
        nu: f64,
        c_dir: Option<CorrMatrix>,
    ) -> Result<Self> {
        let n = omega.len();
        for (name, len) in [("xi", xi.len()), ("theta", theta.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some(c) = &c_dir {
            if c.n() != n {
                return Err(Error::DimensionMismatch {
                    context: "C_dir",
                    expected: n,
                    actual: c.n(),
                });
            }
        }
        if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter("omega must be positive".into()));
        }
        if xi.iter().chain(&theta).any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("xi and theta must be finite".into()));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        Ok(Self {
            xi: DVector::from_vec(xi),
            omega: DVector::from_vec(omega),
            theta: DVector::from_vec(theta),
            nu,
            c_dir,
        })
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn c_dir(&self) -> Option<&CorrMatrix> {
        self.c_dir.as_ref()
    }

    pub fn with_c_dir(mut self, c_dir: CorrMatrix) -> Result<Self> {
        if c_dir.n() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "C_dir",
                expected: self.n(),
                actual: c_dir.n(),
            });
        }
        self.c_dir = Some(c_dir);
        Ok(self)
    }

    fn require_c_dir(&self) -> Result<&CorrMatrix> {
        self.c_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("C_dir is required".into()))
    }
}

/// Mean `xi + theta` and covariance `omega C_dir omega + nu theta theta'`.
pub fn vg_centered_moments(p: &VgParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let c = p.require_c_dir()?.matrix();
    let n = p.n();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        p.omega[i] * c[(i, j)] * p.omega[j] + p.nu * p.theta[i] * p.theta[j]
    });
    Ok((&p.xi + &p.theta, cov))
}

/// Centered volatilities `sqrt(omega_i^2 + nu theta_i^2)` and the centered
/// correlation matrix, with the diagonal set to exactly one.
pub fn direct_to_centered_corr(p: &VgParams) -> Result<(DVector<f64>, CorrMatrix)> {
    let (_, cov) = vg_centered_moments(p)?;
    let sigma = DVector::from_fn(p.n(), |i, _| {
        (p.omega[i] * p.omega[i] + p.nu * p.theta[i] * p.theta[i]).sqrt()
    });
    let mut c = DMatrix::from_fn(p.n(), p.n(), |i, j| cov[(i, j)] / (sigma[i] * sigma[j]));
    c.fill_diagonal(1.0);
    Ok((sigma, CorrMatrix::new(c)?))
}

/// Rewrites the index constraint on the centered moments as a standard
/// constraint on `C_dir`: volatilities `omega`, target `sigma_m^2 - nu (w'theta)^2`.
pub fn vg_market_constraint(p: &VgParams, spec: &MarketSpec) -> Result<MarketSpec> {
    if p.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "VG parameters",
            expected: spec.n(),
            actual: p.n(),
        });
    }
    let m = spec.sole_constraint()?;
    let skew = m.weights().dot(&p.theta);
    let adjusted = m.variance() - p.nu * skew * skew;
    if adjusted.is_nan() || adjusted <= 0.0 {
        return Err(Error::VgSkewExceedsVariance { adjusted });
    }
    spec.with_sigma(p.omega.iter().copied().collect())?
        .with_variance(0, adjusted)
}
