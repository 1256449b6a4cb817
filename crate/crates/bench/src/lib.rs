//! Fixtures shared by the criterion benchmarks.

use implied_corr::nicm::initial_loadings;
use implied_corr::{CorrMatrix, FactorLoadings, MarketSpec};
use implied_corr_cli::synth::{generate_synthetic_market, SynthParams, SynthTarget};

pub struct Fixture {
    pub target: CorrMatrix,
    pub spec: MarketSpec,
    /// Loadings generating the market.
    pub truth: FactorLoadings,
    /// Solver starting point for `k` factors; generally off the constraint.
    pub start: FactorLoadings,
}

/// Synthetic market with a historical target and a 5% premium.
pub fn fixture(n: usize, k: usize, seed: u64) -> Fixture {
    let m = generate_synthetic_market(&SynthParams {
        n,
        k_true: 3,
        crp: 0.05,
        seed,
        target: SynthTarget::Historical,
        ..SynthParams::default()
    })
    .expect("synthetic market");
    let target = m.snapshot.target.expect("synthetic snapshots carry a target");
    let start = initial_loadings(&target, k).expect("k <= n");
    Fixture {
        target,
        spec: m.snapshot.spec,
        truth: m.truth.x_true,
        start,
    }
}
