//! Numerical homogenization of weakly coupled Hamilton–Jacobi systems.
//!
//! The crate solves systems of the form
//! `∂t u_i + H_i(x, x/ε, Du_i, u) = 0` on a periodic torus, computes effective
//! Hamiltonians from the cell problem, runs the decoupling fixed-point
//! iteration and measures homogenization rates.
//!
//! Module map:
//! - [`model`]: Hamiltonian systems, initial data, Legendre transforms, hypothesis checks.
//! - [`grid`]: periodic grids and multi-component grid functions.
//! - [`fd_solver`]: monotone Lax–Friedrichs solvers (Cauchy, monotonized, stationary).
//! - [`cell`]: cell problems and the effective-Hamiltonian cache.
//! - [`oracle_dp`]: Lax–Oleinik dynamic-programming oracle and point-to-point actions.
//! - [`iterate`]: decoupling iteration with contraction instrumentation.
//! - [`harness`]: end-to-end experiments and reports.

pub mod cell;
pub mod config;
pub mod error;
pub mod fd_solver;
pub mod grid;
pub mod harness;
pub mod io;
pub mod iterate;
pub mod model;
pub mod oracle_dp;
pub mod parallel;
pub mod stats;
pub mod tolerances;

pub use error::{Error, ErrorKind, Result};
