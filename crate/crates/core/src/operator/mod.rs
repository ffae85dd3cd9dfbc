//! The driven Rydberg-Ising Hamiltonian
//!
//! ```text
//! H = sum_i (Omega/2 sigma^x_i - delta n_i) + sum_{i<j} U_ij n_i n_j
//! ```
//!
//! on the `2^N` bitstring basis, with bit `i` of a basis index holding the
//! occupation `n_i` of site `i`.

mod couplings;
mod hamiltonian;
mod spectrum;

pub use couplings::{build_couplings, CouplingMap, CouplingMode, CouplingParams, CouplingSpec};
pub use hamiltonian::{HamiltonianView, LinearGenerator, RydbergModel, MAX_SITES};
pub use spectrum::{spectrum_at, Spectrum};
