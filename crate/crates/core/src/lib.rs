//! Implied correlation matrices: feasibility checks, closed-form baselines,
//! the factor-structured nearest implied correlation solver, the economic
//! premium-weight transform and variance-gamma moment conversion.

pub mod baselines;
pub mod corr;
pub mod economic;
pub mod error;
pub mod nicm;
pub mod vg;

pub use baselines::{adjusted_ex_post, equicorrelation, AdjustedExPost, Equicorrelation, Sign};
pub use corr::{
    assemble_correlation, check_feasibility, constraint_residuals, portfolio_variance, Constraint,
    CorrMatrix, FactorLoadings, FeasibilityReport, MarketSpec,
};
pub use economic::{economic_implied_corr, EconomicResult, Orthogonalize};
pub use error::{Error, Result};
pub use nicm::{solve_nicm, SolverConfig, SolverResult, StoppingRule, Termination};
pub use vg::VgParams;
