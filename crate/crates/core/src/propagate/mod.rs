//! Unitary evolution under a time-dependent Hamiltonian.
//!
//! The drive is replaced by a piecewise-constant approximation: on each of
//! `n_steps` equal intervals the Hamiltonian is the mean of its values at the
//! two interval endpoints. Each interval is propagated with a Krylov
//! approximation of the exponential action.

mod evolve;
mod krylov;
mod state;

pub use evolve::{
    check_convergence, evolve_unitary, evolve_unitary_with, piecewise_segments, TimeGrid,
    ConvergenceReport, EvolutionConfig, Segment, Snapshot,
};
pub use krylov::{krylov_exp_apply, KrylovConfig, KrylovPropagator, KrylovStats};
pub use state::QuantumState;
