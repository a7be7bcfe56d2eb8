//! Numerical laboratory for ergodic viscous Hamilton–Jacobi–Bellman equations
//!
//! ```text
//! -Δu + H(x, Du) = f(x) - λ        on a truncated box [-R, R]^d, d ∈ {1, 2}
//! ```
//!
//! The crate computes the ergodic eigenpair `(u, λ)` by policy iteration on a
//! monotone finite-difference scheme, the stationary density of the optimally
//! controlled diffusion `dX = -ξ(X) dt + √2 dW`, and solves the occupation-measure
//! linear program over infinitesimally invariant measures with an independent
//! simplex code. The three routes to the optimal long-run cost (dynamic
//! programming, Fokker–Planck, linear programming) are cross-checked against
//! each other and against Monte Carlo ergodic averages.
//!
//! Module map:
//!
//! - [`grid`]: uniform lattice, scalar/vector fields, finite-difference stencils
//! - [`hamiltonian`]: Hamiltonian/Lagrangian pair, optimal control, running cost
//! - [`operator`]: the controlled generator matrix shared by every solver
//! - [`eigensolver`]: Howard policy iteration for `(u, λ)`, domain exhaustion
//! - [`measure`]: stationary densities and state-control measures
//! - [`lp`]: occupation-measure linear program and the duality identities
//! - [`sde`]: Euler–Maruyama ergodic averages under Markov controls
//! - [`estimates`]: audits of growth assumptions and a-priori estimates
//! - [`io`]: CSV dumps of fields, measures, paths and exhaustion sweeps

// Axis loops index several per-axis arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod eigensolver;
pub mod error;
pub mod estimates;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod lp;
pub mod measure;
pub mod operator;
pub mod sde;

mod linsolve;

pub use eigensolver::{
    domain_exhaustion, pde_residual, policy_evaluation, policy_improvement, solve_ergodic_hjb,
    BoundaryMode, ErgodicSolution, ExhaustionEntry, SolverOptions,
};
pub use error::{Error, Result};
pub use grid::{Grid, ScalarField, Vector, VectorField, MAX_DIM};
pub use hamiltonian::{DriftSpec, HamiltonianModel, HamiltonianKind, PotentialSpec};
pub use lp::{LpProblem, LpSolution};
pub use measure::{DensityField, GridMeasure};
