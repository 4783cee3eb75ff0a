//! Quadratic-exponential BSDEs driven by a Brownian motion and a finite-mark
//! random measure.
//!
//! The crate is organised bottom-up:
//!
//! - [`jump_model`]: the probability model, simulated paths, the recombining
//!   lattice, stochastic integrals and the Doléans-Dade exponential.
//! - [`generators`]: the compensator functional `j`, the canonical generator,
//!   growth bounds, their Lipschitz truncations and the approximation ladder.
//! - [`entropic`]: conditional expectations, entropic risk measures, the
//!   entropy bound and the three path transforms.
//! - [`bsde`]: lattice and regression Monte-Carlo solvers, the ladder and the
//!   comparison utility.
//! - [`verify`]: property checks that produce [`verify::VerificationReport`]s.

pub mod bsde;
pub mod entropic;
pub mod error;
pub mod generators;
pub mod jump_model;
pub mod numeric;
pub mod verify;

pub use error::{Error, Result};
