//! Online identification of linear time-invariant systems with a
//! non-smooth (sum of unsquared residual norms) estimator.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`] generates stable ground-truth systems and simulates
//!   trajectories under a sparse, direction-symmetric disturbance model.
//! * [`objective`] evaluates `f_T(A) = Σ ‖x_{t+1} − A x_t‖₂` and its
//!   subgradients, with an incremental cache for the growing horizon.
//! * [`stepsize`] holds the five step-size rules (best, Polyak, constant,
//!   diminishing, backtracking).
//! * [`solver`] runs the online loop: one subgradient update per period,
//!   then one new term in the objective.
//! * [`theory`] turns the convergence theory into computable diagnostics.
//! * [`baseline`] is the closed-form least-squares estimator.
//! * [`harness`] and [`cli`] orchestrate seeded multi-trial experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod baseline;
pub mod cli;
mod error;
pub mod harness;
pub mod linalg;
pub mod objective;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod stepsize;
pub mod theory;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
