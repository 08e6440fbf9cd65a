//! Penalization solvers and verification diagnostics for backward
//! stochastic variational inequalities with oblique subgradients:
//!
//! ```text
//! Y_t + ∫_t^T H(s, Y_s) dK_s = η + ∫_t^T F(s, X_s, Y_s, Z_s) ds − ∫_t^T Z_s dB_s,
//! dK_s ∈ ∂φ(Y_s)(ds)
//! ```
//!
//! The inclusion is replaced by the Moreau–Yosida drift `H ∇φ_ε(Y)` and the
//! resulting equation is solved backward on an exact binomial lattice (or on
//! a Monte-Carlo ensemble with regression). A finite-difference solver for
//! the associated parabolic variational inequality provides an independent
//! Feynman–Kac cross-check.

pub mod bsde;
pub mod convex;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod field;
pub mod forward;
pub mod pde;
pub mod runner;

pub use error::{BsviError, Result};
