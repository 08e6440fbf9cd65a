//! Driving noise: the time grid, an exact recombining binomial lattice for a
//! one-dimensional Brownian motion, and Euler–Maruyama path ensembles for
//! the forward diffusion.

mod grid;
mod lattice;
mod paths;

pub use grid::TimeGrid;
pub use lattice::{build_lattice, LatticeModel};
pub use paths::{
    moment_report, simulate_paths, AffineCoefficients, Coefficients, MomentReport, PathEnsemble,
};
