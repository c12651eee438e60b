//! Simulation and optimal-control planning for a planar single-leg hopper.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the physical parameters, the hybrid state and the
//!   stance/flight equations of motion (plus the reduced SLIP reference models).
//! * [`raibert`] is the hand-tuned three-part PD baseline.
//! * [`flatness`] maps flat outputs `(y1, y2) = (l, gamma)` and their
//!   derivatives to physical controls and recovers the body angle by quadrature.
//! * [`bvp`] is a three-stage Lobatto IIIa collocation solver for two-point
//!   boundary value problems, including the free end-time transformation.
//! * [`planner`] assembles the indirect minimum-jerk problems for each phase.
//! * [`sim`] runs the hybrid RK4 loop with event detection, noise and metrics.
//! * [`config`] loads the TOML run configuration.

pub mod bvp;
pub mod config;
pub mod error;
pub mod flatness;
pub mod model;
pub mod planner;
pub mod raibert;
pub mod sim;

pub use error::{HopperError, Result};
pub use model::{ControlInput, HopperParams, HopperState, Phase};
