//! Solvers and verification tools for linear-quadratic leader-follower
//! (Stackelberg) stochastic differential games driven by jump diffusions
//! with deterministic coefficients.

pub mod config;
pub mod equilibrium;
pub mod error;
pub mod export;
pub mod follower;
pub mod integrators;
pub mod leader;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod verify;

pub use error::{Result, SolveError};
