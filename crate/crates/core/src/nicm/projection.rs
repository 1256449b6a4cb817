//! Projections onto the loading ball set and the market-constraint surface,
//! and the alternating restoration that combines them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corr::{factor_quadratic_form, FactorLoadings, MarketSpec, EPS_FEAS};
use crate::error::{Error, Result};

use super::objective::masked_outer_times;

/// Rescales every row with squared norm above one onto the unit sphere.
pub fn project_omega(x: &FactorLoadings) -> FactorLoadings {
    FactorLoadings::new(project_rows(x.matrix())).expect("row scaling keeps entries finite")
}

pub(crate) fn project_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for i in 0..out.nrows() {
        let norm_sq = out.row(i).norm_squared();
        if norm_sq > 1.0 {
            out.row_mut(i).scale_mut(1.0 / norm_sq.sqrt());
        }
    }
    out
}

/// Root of the multiplier quadratic used for the equality projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

/// Coefficients of `a l^2 + b l + c = 0`, the market constraint evaluated
/// along the first-order projection `X_E(l) = X + l (vv' o J) X`.
///
/// With `Z = (vv' o J) X`:
/// `a = v'[J o ZZ']v`, `b = 2 v'[J o XZ']v`, `c = v'[J o XX' + I]v - sigma_m^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MultiplierQuadratic {
    pub fn new(x: &DMatrix<f64>, v: &DVector<f64>, target: f64) -> Self {
        Self::along(x, &masked_outer_times(v, x), v, target)
    }

    /// The same quadratic along an arbitrary direction `X + l Z`.
    pub fn along(x: &DMatrix<f64>, z: &DMatrix<f64>, v: &DVector<f64>, target: f64) -> Self {
        let u = x.tr_mul(v);
        let zv = z.tr_mul(v);
        let mut diag_xz = 0.0;
        let mut diag_zz = 0.0;
        for i in 0..x.nrows() {
            let vi2 = v[i] * v[i];
            diag_xz += vi2 * x.row(i).dot(&z.row(i));
            diag_zz += vi2 * z.row(i).norm_squared();
        }
        Self {
            a: zv.norm_squared() - diag_zz,
            b: 2.0 * (u.dot(&zv) - diag_xz),
            c: factor_quadratic_form(x, v) - target,
        }
    }

    /// `(l_plus, l_minus, complex)`. A negative discriminant yields the real
    /// part `-b / 2a` for both roots; `a = 0` falls back to the linear root.
    pub fn roots(&self) -> Result<(f64, f64, bool)> {
        let Self { a, b, c } = *self;
        if a == 0.0 {
            if b == 0.0 {
                return if c == 0.0 {
                    Ok((0.0, 0.0, false))
                } else {
                    Err(Error::ConstraintInsensitive)
                };
            }
            let l = -c / b;
            return Ok((l, l, false));
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            let l = -b / (2.0 * a);
            return Ok((l, l, true));
        }
        let sq = disc.sqrt();
        // cancellation-free evaluation of (-b +- sq) / 2a
        if b >= 0.0 {
            let q = -0.5 * (b + sq);
            let minus = q / a;
            let plus = if q != 0.0 { c / q } else { 0.0 };
            Ok((plus, minus, false))
        } else {
            let q = -0.5 * (b - sq);
            Ok((q / a, c / q, false))
        }
    }
}

/// Both candidate equality projections.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityProjection {
    pub plus: FactorLoadings,
    pub minus: FactorLoadings,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub distance_plus: f64,
    pub distance_minus: f64,
    pub complex_roots: bool,
}

impl EqualityProjection {
    /// Branch whose point is nearer in Frobenius norm; ties go to `Plus`.
    pub fn nearer(&self) -> Branch {
        if self.distance_minus < self.distance_plus {
            Branch::Minus
        } else {
            Branch::Plus
        }
    }

    pub fn select(&self, branch: Branch) -> &FactorLoadings {
        match branch {
            Branch::Plus => &self.plus,
            Branch::Minus => &self.minus,
        }
    }
}

/// `(X_plus, X_minus, l_plus, l_minus, complex)`.
type EqualitySteps = (DMatrix<f64>, DMatrix<f64>, f64, f64, bool);

pub(crate) fn equality_step(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    target: f64,
) -> Result<EqualitySteps> {
    let (lp, lm, complex) = MultiplierQuadratic::new(x, v, target).roots()?;
    let z = masked_outer_times(v, x);
    Ok((x + &z * lp, x + &z * lm, lp, lm, complex))
}

/// First-order projection onto `g(X) = 0` for the single market constraint:
/// `X_E = X + l (vv' o J) X` with `l` a root of [`MultiplierQuadratic`].
pub fn project_equality(x: &FactorLoadings, spec: &MarketSpec) -> Result<EqualityProjection> {
    let constraint = spec.sole_constraint()?;
    if x.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "equality projection",
            expected: spec.n(),
            actual: x.n(),
        });
    }
    let v = spec.scaled_weights(0)?;
    let (plus, minus, lambda_plus, lambda_minus, complex_roots) =
        equality_step(x.matrix(), &v, constraint.variance())?;
    let distance_plus = (&plus - x.matrix()).norm();
    let distance_minus = (&minus - x.matrix()).norm();
    Ok(EqualityProjection {
        plus: FactorLoadings::new(plus)?,
        minus: FactorLoadings::new(minus)?,
        lambda_plus,
        lambda_minus,
        distance_plus,
        distance_minus,
        complex_roots,
    })
}

/// Outcome of the alternating restoration.
#[derive(Debug, Clone, PartialEq)]
pub struct Restoration {
    pub point: DMatrix<f64>,
    /// Branch locked at the first equality projection; `None` if `X` was feasible.
    pub branch: Option<Branch>,
    /// Number of equality projections applied.
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) fn restore(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Restoration> {
    restore_locked(x, v, target, tol, max_iter, None)
}

/// Alternating restoration. With `lock` the given root branch is followed;
/// otherwise both branches are run and the restored point nearer to `x`
/// wins (ties go to the branch nearer after the first equality projection).
fn restore_locked(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    target: f64,
    tol: f64,
    max_iter: usize,
    lock: Option<Branch>,
) -> Result<Restoration> {
    let g = target - factor_quadratic_form(x, v);
    if g.abs() <= tol && in_omega(x) {
        return Ok(Restoration {
            point: x.clone(),
            branch: None,
            iterations: 0,
            residual: g,
        });
    }
    if let Some(branch) = lock {
        return restore_branch(x, v, target, tol, max_iter, branch);
    }
    let (plus, minus, ..) = equality_step(x, v, target)?;
    let (first, second) = if (&minus - x).norm() < (&plus - x).norm() {
        (Branch::Minus, Branch::Plus)
    } else {
        (Branch::Plus, Branch::Minus)
    };
    let primary = restore_branch(x, v, target, tol, max_iter, first);
    let alternative = restore_branch(x, v, target, tol, max_iter, second);
    match (primary, alternative) {
        (Ok(p), Ok(a)) => {
            let dist = |r: &Restoration| (&r.point - x).norm();
            Ok(if dist(&a) < dist(&p) { a } else { p })
        }
        (Ok(p), Err(_)) => Ok(p),
        (Err(_), Ok(a)) => Ok(a),
        (Err(e), Err(_)) => Err(e),
    }
}

fn in_omega(y: &DMatrix<f64>) -> bool {
    (0..y.nrows()).all(|i| y.row(i).norm_squared() <= 1.0 + EPS_FEAS)
}

fn restore_branch(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    target: f64,
    tol: f64,
    max_iter: usize,
    branch: Branch,
) -> Result<Restoration> {
    let residual = |y: &DMatrix<f64>| target - factor_quadratic_form(y, v);
    let pick = |(plus, minus, ..): EqualitySteps| match branch {
        Branch::Plus => plus,
        Branch::Minus => minus,
    };
    let mut y = pick(equality_step(x, v, target)?);
    let mut iterations = 1;
    loop {
        let g = residual(&y);
        if g.abs() <= tol && in_omega(&y) {
            return Ok(Restoration {
                point: y,
                branch: Some(branch),
                iterations,
                residual: g,
            });
        }
        if iterations >= max_iter {
            return active_set_finish(y, v, target, tol, branch, iterations);
        }
        y = project_rows(&y);
        let g = residual(&y);
        if g.abs() <= tol {
            return Ok(Restoration {
                point: y,
                branch: Some(branch),
                iterations,
                residual: g,
            });
        }
        y = pick(equality_step(&y, v, target)?);
        iterations += 1;
    }
}

/// Fallback once plain alternation exhausts its budget, which happens when
/// many rows sit on the unit sphere and each normalization undoes part of
/// the equality step (linear convergence). Rows on the sphere are frozen and
/// the equality step is taken on the free rows only, with the root of
/// smaller magnitude. The frozen set only grows and a step that saturates
/// no new row lands on the constraint, so `n + 1` steps suffice unless
/// every row saturates.
fn active_set_finish(
    mut y: DMatrix<f64>,
    v: &DVector<f64>,
    target: f64,
    tol: f64,
    branch: Branch,
    mut iterations: usize,
) -> Result<Restoration> {
    let residual = |y: &DMatrix<f64>| target - factor_quadratic_form(y, v);
    let fail = |y: &DMatrix<f64>, iterations| Error::RestorationFailed {
        iterations,
        residual: residual(y),
    };
    for _ in 0..=y.nrows() {
        y = project_rows(&y);
        let g = residual(&y);
        if g.abs() <= tol {
            return Ok(Restoration {
                point: y,
                branch: Some(branch),
                iterations,
                residual: g,
            });
        }
        let mut z = masked_outer_times(v, &y);
        let mut free = 0;
        for i in 0..y.nrows() {
            if y.row(i).norm_squared() >= 1.0 - ACTIVE_ROW_TOL {
                z.row_mut(i).fill(0.0);
            } else {
                free += 1;
            }
        }
        if free == 0 {
            return Err(fail(&y, iterations));
        }
        let (lp, lm, complex) = MultiplierQuadratic::along(&y, &z, v, target).roots()?;
        if complex {
            return Err(fail(&y, iterations));
        }
        let l = if lp.abs() <= lm.abs() { lp } else { lm };
        y += &z * l;
        iterations += 1;
    }
    Err(fail(&y, iterations))
}

/// Rows within this of unit squared norm count as saturated.
const ACTIVE_ROW_TOL: f64 = 1e-12;

/// Finds a point satisfying both the row-norm bound and the market
/// constraint near `x`: one equality projection, then (if the result leaves
/// the ball set) alternating row normalization and equality projection with
/// the root branch locked, until `|g| <= restoration_tol`. Both branches are
/// tried and the nearer restored point is returned. Past
/// `max_restoration_iter` alternations, rows on the unit sphere are frozen
/// and the remaining rows carry the equality step.
pub fn project_feasible(
    x: &FactorLoadings,
    spec: &MarketSpec,
    config: &super::SolverConfig,
) -> Result<FactorLoadings> {
    restore_loadings(x, spec, config).map(|r| FactorLoadings::new(r.point).expect("finite"))
}

/// [`project_feasible`] with the restoration diagnostics.
pub fn restore_loadings(
    x: &FactorLoadings,
    spec: &MarketSpec,
    config: &super::SolverConfig,
) -> Result<Restoration> {
    restore_spec(x, spec, config, None)
}

/// Restoration with the root branch fixed in advance.
pub fn restore_on_branch(
    x: &FactorLoadings,
    spec: &MarketSpec,
    config: &super::SolverConfig,
    branch: Branch,
) -> Result<Restoration> {
    restore_spec(x, spec, config, Some(branch))
}

fn restore_spec(
    x: &FactorLoadings,
    spec: &MarketSpec,
    config: &super::SolverConfig,
    lock: Option<Branch>,
) -> Result<Restoration> {
    let constraint = spec.sole_constraint()?;
    if x.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "restoration",
            expected: spec.n(),
            actual: x.n(),
        });
    }
    let v = spec.scaled_weights(0)?;
    restore_locked(
        x.matrix(),
        &v,
        constraint.variance(),
        config.restoration_tol,
        config.max_restoration_iter,
        lock,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{assemble_correlation, constraint_residuals};
    use crate::nicm::SolverConfig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn omega_examples() {
        let x = FactorLoadings::from_rows(&[&[3.0, 4.0], &[0.3, 0.4]]).unwrap();
        let p = project_omega(&x);
        assert_abs_diff_eq!(p.matrix()[(0, 0)], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[(0, 1)], 0.8, epsilon = 1e-15);
        assert_eq!(p.matrix()[(1, 0)], 0.3);
        assert_eq!(p.matrix()[(1, 1)], 0.4);
        assert_eq!(project_omega(&p), p);
    }

    #[test]
    fn omega_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let x = FactorLoadings::new(DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-2.0..2.0))).unwrap();
            let y = project_omega(
                &FactorLoadings::new(DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap(),
            );
            let px = project_omega(&x);
            assert!(px.in_omega(1e-15));
            let lhs = (px.matrix() - y.matrix()).norm();
            let rhs = (x.matrix() - y.matrix()).norm();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn zero_residual_is_fixed_point() {
        let x = FactorLoadings::from_rows(&[&[0.5], &[0.4], &[0.3]]).unwrap();
        let spec0 = MarketSpec::single(vec![0.2, 0.3, 0.25], vec![0.3, 0.3, 0.4], 1.0).unwrap();
        let g0 = constraint_residuals(&x, &spec0).unwrap()[0];
        let spec = spec0.with_variance(0, 1.0 - g0).unwrap();
        let p = project_equality(&x, &spec).unwrap();
        let nearer = p.select(p.nearer());
        assert!((nearer.matrix() - x.matrix()).norm() < 1e-12);
        assert!(p.lambda_plus == 0.0 || p.lambda_minus == 0.0 || p.lambda_plus.abs().min(p.lambda_minus.abs()) < 1e-12);
    }

    #[test]
    fn quadratic_roots_zero_the_exact_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let n = 6;
            let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-0.6..0.6));
            let v = DVector::from_fn(n, |_, _| rng.gen_range(0.02..0.12));
            let target = factor_quadratic_form(&x, &v) * rng.gen_range(0.9..1.1);
            let (plus, minus, ..) = equality_step(&x, &v, target).unwrap();
            for y in [plus, minus] {
                let g = target - factor_quadratic_form(&y, &v);
                assert!(g.abs() <= 1e-8 * target, "residual {g}");
            }
        }
    }

    #[test]
    fn quadratic_matches_dense_expressions() {
        // v'[J o M]v with dense matrices against the O(nk) coefficients
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 5;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-0.7..0.7));
        let v = DVector::from_fn(n, |_, _| rng.gen_range(0.05..0.2));
        let mut q = &v * v.transpose();
        q.fill_diagonal(0.0);
        let masked = |m: DMatrix<f64>| {
            let mut m = m;
            m.fill_diagonal(0.0);
            v.dot(&(m * &v))
        };
        let xx = &x * x.transpose();
        let a = masked(&q * &xx * &q);
        let b = 2.0 * masked(&xx * &q);
        let c = masked(xx.clone()) + v.norm_squared() - 0.01;
        let quad = MultiplierQuadratic::new(&x, &v, 0.01);
        assert_abs_diff_eq!(quad.a, a, epsilon = 1e-15);
        assert_abs_diff_eq!(quad.b, b, epsilon = 1e-15);
        assert_abs_diff_eq!(quad.c, c, epsilon = 1e-15);
    }

    #[test]
    fn insensitive_constraint_is_an_error() {
        let q = MultiplierQuadratic { a: 0.0, b: 0.0, c: 0.1 };
        assert_eq!(q.roots(), Err(Error::ConstraintInsensitive));
        let q = MultiplierQuadratic { a: 0.0, b: 2.0, c: -1.0 };
        assert_eq!(q.roots().unwrap(), (0.5, 0.5, false));
        let q = MultiplierQuadratic { a: 1.0, b: 0.0, c: 1.0 };
        let (p, m, complex) = q.roots().unwrap();
        assert!(complex);
        assert_eq!((p, m), (0.0, 0.0));
    }

    #[test]
    fn feasible_point_unchanged() {
        let x = FactorLoadings::from_rows(&[&[0.5], &[0.4]]).unwrap();
        let spec0 = MarketSpec::single(vec![0.2, 0.3], vec![0.5, 0.5], 1.0).unwrap();
        let g0 = constraint_residuals(&x, &spec0).unwrap()[0];
        let spec = spec0.with_variance(0, 1.0 - g0).unwrap();
        let y = project_feasible(&x, &spec, &SolverConfig::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn restoration_reaches_both_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cfg = SolverConfig::default();
        for _ in 0..100 {
            let n = 8;
            let x = FactorLoadings::new(DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-0.9..0.9))).unwrap();
            let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.6)).collect();
            let truth = project_omega(
                &FactorLoadings::new(DMatrix::from_fn(n, 2, |_, _| rng.gen_range(0.0..0.8))).unwrap(),
            );
            let spec0 = MarketSpec::single(sigma, vec![1.0 / n as f64; n], 1.0).unwrap();
            let g = constraint_residuals(&truth, &spec0).unwrap()[0];
            let spec = spec0.with_variance(0, 1.0 - g).unwrap();
            let y = project_feasible(&x, &spec, &cfg).unwrap();
            assert!(y.in_omega(1e-12));
            assert!(constraint_residuals(&y, &spec).unwrap()[0].abs() <= 1e-10);
            let c = assemble_correlation(&y);
            assert!(c.min_eigenvalue() >= -1e-10);
        }
    }
}
