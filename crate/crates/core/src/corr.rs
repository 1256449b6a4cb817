//! Domain types and the factor-structured correlation assembly.
//!
//! A correlation matrix is generated from an `n x k` loading matrix `X` as
//! `C(X) = J o XX' + I`, i.e. the off-diagonal of `XX'` with a unit diagonal.
//! Whenever every row of `X` lies in the unit ball, `C(X)` is positive
//! semi-definite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for eigenvalue-based PSD verdicts.
pub const EPS_PSD: f64 = 1e-8;
/// Slack allowed on the row-norm condition `sum_d X[i,d]^2 <= 1`.
pub const EPS_FEAS: f64 = 1e-12;
/// Tolerance on `sum(w) = 1` for constraint weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Factor loadings `X` (`n` assets by `k` factors).
///
/// Entries are the correlations of assets to factors. Membership in the
/// feasible set (rows with squared norm at most one) is not enforced on
/// construction because the projections and the solver need to represent
/// infeasible trial points; use [`FactorLoadings::in_omega`] to test it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct FactorLoadings(DMatrix<f64>);

impl TryFrom<DMatrix<f64>> for FactorLoadings {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<FactorLoadings> for DMatrix<f64> {
    fn from(x: FactorLoadings) -> Self {
        x.0
    }
}

impl FactorLoadings {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_finite(&m)?;
        Ok(Self(m))
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self(DMatrix::zeros(n, k))
    }

    /// Builds loadings from row slices; all rows must share one length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        for r in rows {
            if r.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "loading rows",
                    expected: k,
                    actual: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Squared Euclidean norm of every row.
    pub fn row_norms_sq(&self) -> DVector<f64> {
        DVector::from_fn(self.n(), |i, _| self.0.row(i).norm_squared())
    }

    /// True when every row has squared norm `<= 1 + eps`.
    pub fn in_omega(&self, eps: f64) -> bool {
        (0..self.n()).all(|i| self.0.row(i).norm_squared() <= 1.0 + eps)
    }
}

/// Dense symmetric correlation matrix.
///
/// Construction symmetrizes the input as `(C + C') / 2`. Unit diagonal,
/// bounds and PSD are reported by [`check_feasibility`] rather than
/// enforced, so that infeasible model outputs can be represented and
/// diagnosed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct CorrMatrix(DMatrix<f64>);

impl TryFrom<DMatrix<f64>> for CorrMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CorrMatrix> for DMatrix<f64> {
    fn from(c: CorrMatrix) -> Self {
        c.0
    }
}

impl CorrMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        check_finite(&m)?;
        let n = m.nrows();
        let mut c = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = avg;
                c[(j, i)] = avg;
            }
        }
        Ok(Self(c))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// `c J + I`: every off-diagonal entry equal to `c`.
    pub fn equicorrelation(n: usize, c: f64) -> Self {
        Self(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { c }))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Smallest eigenvalue from the symmetric eigensolver.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.0
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Target with zeroed diagonal, `A - I` for a unit-diagonal `A`.
    pub fn off_diagonal(&self) -> DMatrix<f64> {
        let mut a = self.0.clone();
        a.fill_diagonal(0.0);
        a
    }
}

/// One market constraint: a portfolio `w_j` and its implied variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    weights: DVector<f64>,
    variance: f64,
}

impl Constraint {
    pub fn new(name: impl Into<String>, weights: Vec<f64>, variance: f64) -> Result<Self> {
        let name = name.into();
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidMarket(format!(
                "constraint {name:?}: variance must be positive, got {variance}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidMarket(format!(
                "constraint {name:?}: non-finite weight"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMarket(format!(
                "constraint {name:?}: weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            name,
            weights: DVector::from_vec(weights),
            variance,
        })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// Implied volatilities of the constituents plus the market constraints.
/// The first constraint is the market index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketSpecFile", into = "MarketSpecFile")]
pub struct MarketSpec {
    sigma: DVector<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintFile {
    name: String,
    weights: Vec<f64>,
    variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MarketSpecFile {
    sigma: Vec<f64>,
    constraints: Vec<ConstraintFile>,
}

impl TryFrom<MarketSpecFile> for MarketSpec {
    type Error = Error;
    fn try_from(f: MarketSpecFile) -> Result<Self> {
        let constraints = f
            .constraints
            .into_iter()
            .map(|c| Constraint::new(c.name, c.weights, c.variance))
            .collect::<Result<Vec<_>>>()?;
        MarketSpec::new(f.sigma, constraints)
    }
}

impl From<MarketSpec> for MarketSpecFile {
    fn from(s: MarketSpec) -> Self {
        MarketSpecFile {
            sigma: s.sigma.iter().copied().collect(),
            constraints: s
                .constraints
                .into_iter()
                .map(|c| ConstraintFile {
                    name: c.name,
                    weights: c.weights.iter().copied().collect(),
                    variance: c.variance,
                })
                .collect(),
        }
    }
}

impl MarketSpec {
    pub fn new(sigma: Vec<f64>, constraints: Vec<Constraint>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidMarket(format!(
                "implied volatilities must be positive, got {bad}"
            )));
        }
        for c in &constraints {
            if c.weights.len() != sigma.len() {
                return Err(Error::InvalidMarket(format!(
                    "constraint {:?} has {} weights for {} assets",
                    c.name,
                    c.weights.len(),
                    sigma.len()
                )));
            }
        }
        Ok(Self {
            sigma: DVector::from_vec(sigma),
            constraints,
        })
    }

    /// Single market-index constraint.
    pub fn single(sigma: Vec<f64>, weights: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(sigma, vec![Constraint::new("m", weights, variance)?])
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn constraint(&self, j: usize) -> Result<&Constraint> {
        self.constraints.get(j).ok_or(Error::ConstraintIndex {
            index: j,
            count: self.constraints.len(),
        })
    }

    /// The market-index constraint (index 0).
    pub fn market(&self) -> Result<&Constraint> {
        self.constraint(0)
    }

    /// Requires exactly one constraint and returns it.
    pub fn sole_constraint(&self) -> Result<&Constraint> {
        if self.constraints.len() != 1 {
            return Err(Error::UnsupportedConstraintCount(self.constraints.len()));
        }
        Ok(&self.constraints[0])
    }

    /// `v_j = sigma o w_j`.
    pub fn scaled_weights(&self, j: usize) -> Result<DVector<f64>> {
        Ok(self.sigma.component_mul(self.constraint(j)?.weights()))
    }

    /// Same constraints with every volatility multiplied by `factor` and
    /// every target variance by `factor^2`.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let constraints = self
            .constraints
            .iter()
            .map(|c| Constraint {
                name: c.name.clone(),
                weights: c.weights.clone(),
                variance: c.variance * factor * factor,
            })
            .collect();
        Self::new(
            self.sigma.iter().map(|s| s * factor).collect(),
            constraints,
        )
    }

    /// Replaces the target variance of constraint `j`.
    pub fn with_variance(&self, j: usize, variance: f64) -> Result<Self> {
        let mut constraints = self.constraints.clone();
        let c = self.constraint(j)?;
        constraints[j] = Constraint::new(c.name.clone(), c.weights.iter().copied().collect(), variance)?;
        Self::new(self.sigma.iter().copied().collect(), constraints)
    }

    /// Replaces the volatility vector, keeping the constraints.
    pub fn with_sigma(&self, sigma: Vec<f64>) -> Result<Self> {
        Self::new(sigma, self.constraints.clone())
    }
}

/// `C(X) = J o XX' + I`.
pub fn assemble_correlation(x: &FactorLoadings) -> CorrMatrix {
    let m = x.matrix();
    let mut c = m * m.transpose();
    c.fill_diagonal(1.0);
    CorrMatrix(c)
}

/// Idiosyncratic variances `F[i,i]^2 = 1 - sum_d X[i,d]^2`.
pub fn residual_variances(x: &FactorLoadings) -> Result<DVector<f64>> {
    let norms = x.row_norms_sq();
    for (row, &norm_sq) in norms.iter().enumerate() {
        if norm_sq > 1.0 + EPS_FEAS {
            return Err(Error::RowNormViolation { row, norm_sq });
        }
    }
    Ok(norms.map(|s| (1.0 - s).max(0.0)))
}

/// `w_j' sigma C sigma w_j`.
pub fn portfolio_variance(c: &CorrMatrix, spec: &MarketSpec, j: usize) -> Result<f64> {
    if c.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "portfolio variance",
            expected: spec.n(),
            actual: c.n(),
        });
    }
    let v = spec.scaled_weights(j)?;
    Ok(v.dot(&(c.matrix() * &v)))
}

/// `v' C(X) v` evaluated from the loadings in `O(nk)`:
/// `|X'v|^2 - sum_i v_i^2 |X_i|^2 + sum_i v_i^2`.
pub fn factor_quadratic_form(x: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let u = x.tr_mul(v);
    let mut diag = 0.0;
    let mut vv = 0.0;
    for i in 0..x.nrows() {
        let vi2 = v[i] * v[i];
        diag += vi2 * x.row(i).norm_squared();
        vv += vi2;
    }
    u.norm_squared() - diag + vv
}

/// Market-constraint residuals `g(X)` with `g_j = sigma_j^2 - w_j' sigma C(X) sigma w_j`,
/// evaluated for all constraints at once as `s - [I o (W' sigma C sigma W)] 1`.
pub fn constraint_residuals(x: &FactorLoadings, spec: &MarketSpec) -> Result<DVector<f64>> {
    if x.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "constraint residuals",
            expected: spec.n(),
            actual: x.n(),
        });
    }
    Ok(matrix_constraint_residuals(&assemble_correlation(x), spec))
}

/// W-form residuals for an arbitrary symmetric matrix of matching size.
pub(crate) fn matrix_constraint_residuals(c: &CorrMatrix, spec: &MarketSpec) -> DVector<f64> {
    let nc = spec.constraints().len();
    let n = spec.n();
    if nc == 0 {
        return DVector::zeros(0);
    }
    // V = sigma W, columns v_j
    let v = DMatrix::from_fn(n, nc, |i, j| spec.sigma()[i] * spec.constraints()[j].weights()[i]);
    let cv = c.matrix() * &v;
    DVector::from_fn(nc, |j, _| {
        spec.constraints()[j].variance() - v.column(j).dot(&cv.column(j))
    })
}

/// Inequality slack `h(X) = 1 - (X o X) 1`; nonnegative iff `X` is in the feasible set.
pub fn inequality_slack(x: &FactorLoadings) -> DVector<f64> {
    x.row_norms_sq().map(|s| 1.0 - s)
}

/// Outcome of checking the necessary conditions on a correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub symmetric: bool,
    pub unit_diagonal: bool,
    pub bounded: bool,
    pub min_eigenvalue: f64,
    pub psd: bool,
    pub constraint_residuals: Vec<f64>,
    pub economically_matched: bool,
}

impl FeasibilityReport {
    /// Symmetric, unit diagonal, bounded and PSD.
    pub fn mathematically_feasible(&self) -> bool {
        self.symmetric && self.unit_diagonal && self.bounded && self.psd
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.constraint_residuals
            .iter()
            .fold(0.0, |acc: f64, g| acc.max(g.abs()))
    }
}

/// Evaluates symmetry, unit diagonal, bounds, PSD and every market constraint.
/// `economically_matched` holds iff `max_j |g_j| <= tol`.
pub fn check_feasibility(c: &CorrMatrix, spec: &MarketSpec, tol: f64) -> Result<FeasibilityReport> {
    if c.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "feasibility check",
            expected: spec.n(),
            actual: c.n(),
        });
    }
    let m = c.matrix();
    let n = c.n();
    let mut symmetric = true;
    let mut unit_diagonal = true;
    let mut bounded = true;
    for i in 0..n {
        if (m[(i, i)] - 1.0).abs() > EPS_FEAS {
            unit_diagonal = false;
        }
        for j in 0..n {
            if m[(i, j)] != m[(j, i)] {
                symmetric = false;
            }
            if m[(i, j)].abs() > 1.0 + EPS_FEAS {
                bounded = false;
            }
        }
    }
    let min_eigenvalue = c.min_eigenvalue();
    let residuals = matrix_constraint_residuals(c, spec);
    let economically_matched = residuals.iter().all(|g| g.abs() <= tol);
    Ok(FeasibilityReport {
        symmetric,
        unit_diagonal,
        bounded,
        min_eigenvalue,
        psd: min_eigenvalue >= -EPS_PSD,
        constraint_residuals: residuals.iter().copied().collect(),
        economically_matched,
    })
}
