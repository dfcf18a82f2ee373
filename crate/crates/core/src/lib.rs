//! Solver and simulator for a partially observed linear-quadratic mean-field
//! Stackelberg game: one leader, `N` followers, each observing only a noisy
//! functional of its own state.
//!
//! The crate computes the decentralized feedback strategies of both layers
//! from a chain of Riccati and filtering equations, simulates the finite
//! population in closed loop, and provides the experiment drivers that check
//! the approximate-equilibrium decay rates empirically.
//!
//! Pipeline, in dependency order:
//!
//! 1. [`model`] — coefficients, assumption checks, centralized costs;
//! 2. [`solvers`] — the Riccati layers, filter covariances, affine terms;
//! 3. [`strategy`] — feedback gains and deterministic mean-field paths;
//! 4. [`filtersim`] — Euler-Maruyama population simulation with per-agent
//!    Kalman-Bucy filters and Monte Carlo cost estimates;
//! 5. [`experiments`] — decay-rate sweeps, equilibrium margin checks, and
//!    the sticky-price product-planning application.

pub mod error;
pub mod export;
pub mod experiments;
pub mod filtersim;
pub mod grid;
pub mod model;
pub mod path;
pub mod plot;
pub mod solvers;
pub mod strategy;
pub mod testing;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use path::MatrixPath;
