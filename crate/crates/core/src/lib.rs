//! Simulation and verification toolkit for branching random walk in a
//! Pareto random environment and its lilypad scaling limits.
//!
//! * [`env`] samples the discrete environment, its rescaled point process
//!   and the limiting Poisson process on finite windows.
//! * [`lilypad`] computes δ-truncated lilypad hitting times with a
//!   Dijkstra-type sweep and evaluates hitting, particle and support fields.
//! * [`engine`] wraps the solver with window certification and exact
//!   relevance pruning for large windows and small cutoffs.
//! * [`geometry`] handles unions of L1 balls and Hausdorff distances.
//! * [`brw`] simulates the branching random walk and integrates the
//!   parabolic Anderson model.
//! * [`experiments`] runs the Monte Carlo studies (ageing, convergence).

pub mod brw;
pub mod cli;
pub mod engine;
pub mod env;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod lilypad;
pub mod rng;

pub use error::{Error, Result};
