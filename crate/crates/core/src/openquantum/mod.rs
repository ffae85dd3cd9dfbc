//! Dynamics with local dephasing `L[rho] = sum_i gamma/2 (2 n_i rho n_i -
//! n_i rho - rho n_i)`, by quantum trajectories or by direct integration of
//! the master equation for small systems.

mod master;
mod mcwf;

pub use master::{evolve_master_direct, DensityOperator, MasterConfig, MASTER_MAX_SITES};
pub use mcwf::{evolve_mcwf, evolve_mcwf_with, EnsembleSnapshot, JumpScheme, McwfConfig, TrajectoryEnsemble, Unraveling};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform single-site dephasing with jump operators `sqrt(gamma) n_i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DephasingModel {
    /// Rate in rad/us.
    pub gamma: f64,
}

impl DephasingModel {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid("gamma", "must be finite and non-negative"));
        }
        Ok(DephasingModel { gamma })
    }

    /// Rate given relative to an interaction energy `u` (rad/us).
    pub fn from_ratio(hbar_gamma_over_u: f64, u: f64) -> Result<Self> {
        Self::new(hbar_gamma_over_u * u.abs())
    }
}
