use nalgebra::DMatrix;

use crate::corr::{CorrMatrix, FactorLoadings};
use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue, ties
/// broken by the solver's index order. Each eigenvector's sign is fixed so
/// that its entries sum to a nonnegative value.
pub(crate) fn sorted_eigenpairs(a: &DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = a.clone().symmetric_eigen();
    let mut pairs: Vec<(usize, f64)> = eig.eigenvalues.iter().copied().enumerate().collect();
    pairs.sort_by(|l, r| r.1.total_cmp(&l.1).then(l.0.cmp(&r.0)));
    pairs
        .into_iter()
        .map(|(idx, val)| {
            let mut e: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            if e.iter().sum::<f64>() < 0.0 {
                e.iter_mut().for_each(|x| *x = -*x);
            }
            (val, e)
        })
        .collect()
}

/// Starting loadings from the leading eigenpairs `(iota_d, e_d)` of the target:
/// column `d` is `s_d e_d` with
/// `s_d = min{ sqrt((iota_d - 1)|e_d|^2 / (k|e_d|^4 - k sum_i e_{d,i}^4)), 1 / (sqrt(k) max_i |e_{d,i}|) }`.
///
/// The second bound keeps every row inside the unit ball. Eigenvalues at or
/// below one contribute a zero column; a vanishing denominator (a coordinate
/// eigenvector) uses the second bound alone.
pub fn initial_loadings(a: &CorrMatrix, k: usize) -> Result<FactorLoadings> {
    let n = a.n();
    if k > n {
        return Err(Error::TooManyFactors { k, n });
    }
    let kf = k as f64;
    let mut x = DMatrix::zeros(n, k);
    for (d, (iota, e)) in sorted_eigenpairs(a.matrix()).into_iter().take(k).enumerate() {
        let norm_sq: f64 = e.iter().map(|v| v * v).sum();
        let fourth: f64 = e.iter().map(|v| v.powi(4)).sum();
        let max_abs = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            continue;
        }
        let cap = 1.0 / (kf.sqrt() * max_abs);
        let scale = if iota <= 1.0 {
            0.0
        } else {
            let denom = kf * norm_sq * norm_sq - kf * fourth;
            if denom <= 0.0 {
                cap
            } else {
                ((iota - 1.0) * norm_sq / denom).sqrt().min(cap)
            }
        };
        for (i, v) in e.iter().enumerate() {
            x[(i, d)] = scale * v;
        }
    }
    FactorLoadings::new(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::assemble_correlation;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_target_gives_zero_start() {
        let x = initial_loadings(&CorrMatrix::identity(4), 2).unwrap();
        assert!(x.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_factors() {
        assert_eq!(
            initial_loadings(&CorrMatrix::identity(2), 3),
            Err(Error::TooManyFactors { k: 3, n: 2 })
        );
    }

    #[test]
    fn single_factor_matches_borsdorf_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(0.1..0.6));
        let a = assemble_correlation(&FactorLoadings::new(x).unwrap());
        let general = initial_loadings(&a, 1).unwrap();
        // single-factor start: min{ sqrt((iota - 1) / (1 - sum e^4)), 1 / max|e| } e
        let (iota, e) = sorted_eigenpairs(a.matrix()).remove(0);
        let fourth: f64 = e.iter().map(|v| v.powi(4)).sum();
        let max_abs = e.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let s = ((iota - 1.0) / (1.0 - fourth)).sqrt().min(1.0 / max_abs);
        for i in 0..6 {
            assert_abs_diff_eq!(general.matrix()[(i, 0)], s * e[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn start_lies_in_ball_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let cov = &b * b.transpose();
            let d = cov.diagonal().map(|v: f64| 1.0 / v.sqrt());
            let corr = DMatrix::from_fn(6, 6, |i, j| cov[(i, j)] * d[i] * d[j]);
            let a = CorrMatrix::new(corr).unwrap();
            let x = initial_loadings(&a, 3).unwrap();
            assert!(x.row_norms_sq().iter().all(|&s| s <= 1.0 + 1e-12));
        }
    }
}
