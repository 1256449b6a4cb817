//! Nearness objective `f(X) = |J o XX' - A_hat|_F^2` and the gradients of the
//! Lagrangian terms.

use nalgebra::{DMatrix, DVector};

use crate::corr::{FactorLoadings, MarketSpec};
use crate::error::{Error, Result};

/// `J o XX' - A_hat` (zero diagonal).
fn fit_residual(x: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = x * x.transpose() - a_hat;
    m.fill_diagonal(0.0);
    m
}

/// `f(X) = |J o XX' - A_hat|_F^2` where `A_hat = A - I`.
pub fn objective(x: &FactorLoadings, a_hat: &DMatrix<f64>) -> f64 {
    fit_residual(x.matrix(), a_hat).norm_squared()
}

/// `grad f = 4 (J o XX' - A_hat) X`.
pub fn objective_gradient(x: &FactorLoadings, a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    objective_and_gradient(x.matrix(), a_hat).1
}

pub(crate) fn objective_and_gradient(x: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let m = fit_residual(x, a_hat);
    let f = m.norm_squared();
    (f, (m * x) * 4.0)
}

pub(crate) fn objective_value(x: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> f64 {
    fit_residual(x, a_hat).norm_squared()
}

/// `(J o vv') X`, row `i` equal to `v_i (X'v - v_i X_i)`.
pub(crate) fn masked_outer_times(v: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let u = x.tr_mul(v);
    let mut out = x.clone();
    for i in 0..x.nrows() {
        for d in 0..x.ncols() {
            out[(i, d)] = v[i] * (u[d] - v[i] * x[(i, d)]);
        }
    }
    out
}

/// Gradient of the single constraint `g(X) = s - v'C(X)v`: `-2 (J o vv') X`.
pub(crate) fn constraint_gradient(v: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    masked_outer_times(v, x) * -2.0
}

/// `grad_X (lambda' g(X)) = sum_j -2 lambda_j sigma (J o w_j w_j') sigma X`.
pub fn lagrangian_gradient_g(
    x: &FactorLoadings,
    spec: &MarketSpec,
    lambda: &[f64],
) -> Result<DMatrix<f64>> {
    if lambda.len() != spec.constraints().len() {
        return Err(Error::DimensionMismatch {
            context: "constraint multipliers",
            expected: spec.constraints().len(),
            actual: lambda.len(),
        });
    }
    if x.n() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "constraint gradient",
            expected: spec.n(),
            actual: x.n(),
        });
    }
    let mut grad = DMatrix::zeros(x.n(), x.k());
    for (j, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            let v = spec.scaled_weights(j)?;
            grad += constraint_gradient(&v, x.matrix()) * l;
        }
    }
    Ok(grad)
}

/// `grad_X (kappa' h(X)) = -2 D_kappa X`.
pub fn lagrangian_gradient_h(x: &FactorLoadings, kappa: &[f64]) -> Result<DMatrix<f64>> {
    if kappa.len() != x.n() {
        return Err(Error::DimensionMismatch {
            context: "inequality multipliers",
            expected: x.n(),
            actual: kappa.len(),
        });
    }
    let m = x.matrix();
    Ok(DMatrix::from_fn(x.n(), x.k(), |i, d| -2.0 * kappa[i] * m[(i, d)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::assemble_correlation;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_objective(x: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
        let n = x.nrows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let c: f64 = (0..x.ncols()).map(|d| x[(i, d)] * x[(j, d)]).sum();
                    s += (c - a[(i, j)]).powi(2);
                }
            }
        }
        s
    }

    #[test]
    fn perfect_fit_is_zero_with_zero_gradient() {
        let x = FactorLoadings::from_rows(&[&[0.5, 0.1], &[0.3, -0.4], &[0.7, 0.2]]).unwrap();
        let a_hat = assemble_correlation(&x).off_diagonal();
        assert_abs_diff_eq!(objective(&x, &a_hat), 0.0, epsilon = 1e-30);
        assert!(objective_gradient(&x, &a_hat).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn origin_instance() {
        let x = FactorLoadings::zeros(2, 1);
        let a_hat = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert_abs_diff_eq!(objective(&x, &a_hat), 0.5, epsilon = 1e-15);
        assert!(objective_gradient(&x, &a_hat).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-0.7..0.7));
            let mut a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            a = (&a + a.transpose()) * 0.5;
            a.fill_diagonal(0.0);
            let fx = FactorLoadings::new(x.clone()).unwrap();
            assert_abs_diff_eq!(objective(&fx, &a), naive_objective(&x, &a), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_multipliers_and_zero_loadings() {
        let spec = MarketSpec::single(vec![0.2, 0.3], vec![0.5, 0.5], 0.03).unwrap();
        let x = FactorLoadings::from_rows(&[&[0.5], &[0.2]]).unwrap();
        assert!(lagrangian_gradient_g(&x, &spec, &[0.0]).unwrap().iter().all(|&g| g == 0.0));
        let z = FactorLoadings::zeros(2, 1);
        assert!(lagrangian_gradient_g(&z, &spec, &[1.3]).unwrap().iter().all(|&g| g == 0.0));
        assert!(lagrangian_gradient_h(&x, &[0.0, 0.0]).unwrap().iter().all(|&g| g == 0.0));
        let h = lagrangian_gradient_h(&x, &[1.0, 1.0]).unwrap();
        assert_eq!(h, x.matrix() * -2.0);
    }

    #[test]
    fn multiplier_length_checked() {
        let spec = MarketSpec::single(vec![0.2, 0.3], vec![0.5, 0.5], 0.03).unwrap();
        let x = FactorLoadings::zeros(2, 1);
        assert!(lagrangian_gradient_g(&x, &spec, &[1.0, 2.0]).is_err());
        assert!(lagrangian_gradient_h(&x, &[1.0]).is_err());
    }
}
