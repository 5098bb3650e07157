//! Discrete-time control barrier functions for two-vehicle collision
//! avoidance, with a discrete-action safety filter and a data-driven path
//! to learning barrier functions from rollouts.
//!
//! The crate is organized around four layers:
//!
//! - [`dynamics`]: deterministic plants (a fixed-wing pair and a double
//!   integrator) behind one black-box stepping interface.
//! - [`barrier`]: exact barrier functions built by rolling out an evasive
//!   maneuver and taking the worst-case safety margin, plus the
//!   enumeration-based safety filter and max composition.
//! - [`learning`]: rollout dataset generation, an MLP regressor with
//!   Monte-Carlo dropout uncertainty, and the iterative safe-set
//!   expansion loop that retrains the barrier from filtered rollouts.
//! - [`sim`]: episode runner, waypoint nominal controller, collision-rate
//!   evaluation, named scenarios, and safe-set grids.
//!
//! The `mfbf` binary wires these together behind a config file; see
//! [`cli`] and the repository README.

pub mod barrier;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod learning;
pub mod seeds;
pub mod sim;

pub use error::{Error, Result};
