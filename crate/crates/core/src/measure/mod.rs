//! Measurement emulation and the observables computed from snapshots.

mod analysis;
mod correlation;
mod moments;
mod shots;

pub use analysis::{
    baseline_histogram, fit_correlation_length, lightcone_crossings, neel_structure_factor,
    sublattice_histogram, sublattice_histogram_exact, CorrelationLength, LightconeResult,
    NeelFactor, SublatticeHistogram,
};
pub use correlation::{g2_connected, CorrelationEntry, CorrelationMap, CorrelationSource};
pub use moments::Moments;
pub use shots::{sample_shots, DetectionErrors, ShotSet, ShotSource};

/// Default shell cutoff of the Néel structure factor.
pub const NEEL_CUTOFF: usize = 4;
