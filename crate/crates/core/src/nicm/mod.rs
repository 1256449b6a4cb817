//! Nearest implied correlation matrix: the factor-structured matrix closest
//! in Frobenius norm to a target that also matches the market constraint.

mod objective;
mod projection;
mod reference;
mod solver;
mod start;

pub use objective::{lagrangian_gradient_g, lagrangian_gradient_h, objective, objective_gradient};
pub use projection::{
    project_equality, project_feasible, project_omega, restore_loadings, restore_on_branch, Branch,
    EqualityProjection, MultiplierQuadratic, Restoration,
};
pub use reference::reference_solve;
pub use solver::{solve_nicm, LineSearch, SolverConfig, SolverResult, StoppingRule, Termination};
pub use start::initial_loadings;
