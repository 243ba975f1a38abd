//! Hopf–Lax weak solutions of `∂ₜf = 2|∇f|²` on the cone of positive
//! semidefinite matrices, exact finite-`N` free energies of the rank-`K`
//! spiked matrix model, and Monte Carlo checks tying the two together.

pub mod error;
pub mod exec;
pub mod finite_n;
pub mod hopflax;
pub mod initcond;
pub mod nonlinearity;
pub mod quadrature;
pub mod rng;
pub mod symcone;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;
pub use initcond::{InitialCondition, LinearPsi, Prior, PriorPsi};
pub use nonlinearity::{Nonlinearity, Quadratic};
pub use symcone::{Mat, SymMat};
