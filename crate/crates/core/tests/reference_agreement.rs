mod common;

use implied_corr::nicm::reference_solve;
use implied_corr::{
    assemble_correlation, equicorrelation, solve_nicm, CorrMatrix, MarketSpec, SolverConfig,
};

fn tight() -> SolverConfig {
    SolverConfig {
        fn_tol: 1e-10,
        ..SolverConfig::default()
    }
}

#[test]
fn spgm_matches_reference_on_small_instances() {
    let mut rng = common::rng(2024);
    for case in 0..20 {
        let n = 2 + case % 3;
        let x = common::loadings(&mut rng, n, 2);
        let a = common::noisy_target(&mut rng, &x, 0.05);
        let markup = rand::Rng::gen_range(&mut rng, -0.05..0.1);
        let spec = common::market(&mut rng, &x, markup);
        let fast = solve_nicm(&a, &spec, &tight()).unwrap();
        let slow = reference_solve(&a, &spec, 1, &tight()).unwrap();
        assert!(fast.converged && slow.converged, "case {case}");
        let gap = (fast.fn_value - slow.fn_value).abs();
        assert!(gap <= 1e-3, "case {case}: {} vs {}", fast.fn_value, slow.fn_value);
    }
}

#[test]
fn reference_recovers_attainable_target() {
    let mut rng = common::rng(7);
    for _ in 0..5 {
        let x = common::loadings(&mut rng, 4, 1);
        let spec = common::market(&mut rng, &x, 0.0);
        let r = reference_solve(&assemble_correlation(&x), &spec, 1, &tight()).unwrap();
        assert!(r.converged);
        assert!(r.fn_value <= 1e-6, "{}", r.fn_value);
    }
}

#[test]
fn equicorrelation_target_is_fit_by_both() {
    let spec = MarketSpec::single(vec![0.2, 0.3, 0.25, 0.4], vec![0.1, 0.2, 0.3, 0.4], 0.05).unwrap();
    let e = equicorrelation(&spec).unwrap();
    assert!(e.c_bar > 0.0 && e.psd_range);
    let a: CorrMatrix = e.matrix;
    let fast = solve_nicm(&a, &spec, &tight()).unwrap();
    let slow = reference_solve(&a, &spec, 1, &tight()).unwrap();
    assert!(fast.fn_value <= 1e-6, "{}", fast.fn_value);
    assert!(slow.fn_value <= 1e-6, "{}", slow.fn_value);
}
