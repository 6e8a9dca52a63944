//! Ordinal utility revelation from qualitative preference statements.
//!
//! Statements such as `prefer (X1 or X2) over (not X3)` are compiled into
//! margin constraints between partial assignments and solved as a
//! minimum-norm separation problem in the space of all consistent partial
//! assignments. The subset kernel keeps that space implicit.

pub mod compile;
pub mod error;
pub mod experiment;
pub mod formula;
pub mod kernel;
pub mod schema;
pub mod solver;
pub mod utility;

pub use compile::{
    compile_expression, compile_statement, Constraint, ConstraintKind, ConstraintSet,
};
pub use error::{Error, Result};
pub use experiment::{generate_synthetic, run_degree_sweep, ErrorCurve, SyntheticSpec};
pub use formula::{parse_expression, parse_formula, Formula, PreferenceExpression, Statement};
pub use kernel::{degree_params, gram_matrix, kernel_eval, KernelMode, KernelParams};
pub use schema::{load_catalog, load_schema, Catalog, PartialAssignment, Schema};
pub use solver::{
    check_kkt, reconstruct_weights, solve_dual, MarginMode, SolverConfig, UtilityModel, Verdict,
};
pub use utility::{evaluate_utility, ordering_error, rank_catalog, Ranking, RatedPairs};
