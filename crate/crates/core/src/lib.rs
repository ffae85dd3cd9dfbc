//! Simulation of ramped Rydberg-atom arrays: exact state-vector dynamics on
//! the bitstring basis, local dephasing via quantum trajectories or direct
//! density-matrix integration, correlation analysis of snapshots, exact
//! classical ground states and short-time perturbative predictions.

pub mod classical;
pub mod error;
pub mod lattice;
pub mod measure;
pub mod openquantum;
pub mod operator;
pub mod propagate;
pub mod runner;
pub mod schedule;
pub mod shorttime;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64;
