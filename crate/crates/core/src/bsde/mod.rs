//! Backward solvers for the penalized equation
//!
//! ```text
//! Y_t + ∫_t^T H(s, Y_s)∇φ_ε(Y_s) ds = η + ∫_t^T F(s, X_s, Y_s, Z_s) ds − ∫_t^T Z_s dB_s
//! ```
//!
//! on the binomial lattice or by least-squares Monte Carlo, plus the
//! partition scheme with a lagged field for state-dependent `H`.

mod lagged;
mod problem;
mod regression;
mod solution;
mod solve;
mod step;

pub use lagged::{solve_lagged_h, sup_difference, LaggedOptions, LaggedSolution};
pub use problem::{BsviProblem, Driver, DriverKind, ForwardModel, ProblemShift, Terminal};
pub use regression::{monomial_exponents, regression_cond_expect, Regressor, MAX_DEGREE};
pub use solution::{BackwardSolution, SolutionLayout, SolveMetadata};
pub use solve::{backward_step, solve_penalized, Backend, CondExpectation, StepOutput};
pub use step::{MAX_ITERATIONS, RESIDUAL_TOL};

pub(crate) use solve::lattice_states;
pub(crate) use step::{solve_node, FieldSource, StepContext};


#[cfg(test)]
mod tests;
