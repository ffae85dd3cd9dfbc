//! Unit conventions.
//!
//! Internally hbar = 1, times are in microseconds and energies are angular
//! frequencies in rad/us. User-facing configs take frequencies as f = E/h in
//! MHz, the way experimental tables list them.

use std::f64::consts::TAU;

/// f/MHz (i.e. E/h) to angular frequency in rad/us.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TAU * f_mhz
}

/// Angular frequency in rad/us to E/h in MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / TAU
}
