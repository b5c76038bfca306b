//! Macroscopic urban traffic network simulation with model predictive signal control.
//!
//! The crate couples a cycle-indexed store-and-forward traffic model with two
//! receding-horizon controllers: a centralized MPC over the whole network and a
//! distributed MPC that coordinates per-junction subsystems through an augmented
//! Lagrangian exchange with neighbor-cost sensitivity corrections. A STARIMA
//! forecaster supplies demand and disturbance predictions, and a scenario
//! harness benchmarks the controllers against a fixed-time baseline on total
//! time spent, queue length, vehicle counts, constraint satisfaction, and
//! controller wall time.

pub mod dynamics;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod mpc;
pub mod network;
pub mod solver;

pub use error::{Error, Result};
