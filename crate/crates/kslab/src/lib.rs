//! Numerical laboratory for the parabolic-elliptic chemotaxis system
//!
//!   rho_t = div(grad rho - rho grad(u + log V)),   -Delta u = rho,
//!
//! on narrow planar domains, with zero-flux density boundary and u = 0 on the
//! boundary. The crate provides masked Cartesian grids, a Poisson solver,
//! Orlicz-space norms, free-energy bookkeeping, explicit barrier families with
//! a monotone steady-state iteration, a linearized-stability eigensolver, an
//! IMEX time integrator, and a config-driven experiment runner.

pub mod config;
pub mod dynamics;
pub mod energetics;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod orlicz;
pub mod poisson;
pub mod runner;
pub mod spectral;
pub mod steady;

pub use error::{Error, Result};
