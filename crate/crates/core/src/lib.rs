//! Simulation and verification of discrete-time fragmentation-interaction-
//! aggregation processes (FIAPs) and their replica mean-field models.
//!
//! * [`model`]: single-network dynamics and named model families.
//! * [`replica`]: the M-replica dynamics and Monte Carlo campaigns.
//! * [`analytics`]: closed-form limit laws and the counting-model solver.
//! * [`stats`]: estimators and verdicts on the replica limit theorems.
//! * [`extensions`]: random interactions, exogenous input/output,
//!   time-inhomogeneous models and vector-state partitions.

pub mod analytics;
pub mod error;
pub mod extensions;
pub mod model;
pub mod replica;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
