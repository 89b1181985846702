//! Strong solutions of stationary first-order mean-field games on the flat
//! torus, and numerical certificates for their weak-strong uniqueness.
//!
//! The pipeline runs [`solver::solve_strong`], assembles the linearization
//! with [`linearize::assemble_coeffs`], solves the adjoint elliptic problem in
//! [`adjoint`], and collects every verdict in a [`certify::Certificate`].

pub mod adjoint;
pub mod certify;
pub mod config;
pub mod error;
pub mod exponents;
pub mod field;
mod gmres;
pub mod hamiltonian;
pub mod linearize;
pub mod mfg;
mod serde_ext;
pub mod solver;

pub use adjoint::{AdjointProblem, AdjointReport, AdjointSolver};
pub use certify::{certify, emit_reports, Certificate, CertifyOptions, CertifyRun};
pub use config::RunConfig;
pub use error::{MfgError, Result};
pub use exponents::ExponentProfile;
pub use field::{make_grid, ScalarField, TorusGrid, TrigPolynomial, VectorField};
pub use hamiltonian::{Coupling, DensityDomain, Family, HamiltonianSpec};
pub use linearize::{EllipticCoeffs, LinearizationCoeffs};
pub use mfg::FieldPair;
pub use solver::{solve_strong, SolveReport, SolverOptions};
