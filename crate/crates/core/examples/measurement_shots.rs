//! Simulated fluorescence snapshots with detection errors, and the
//! sublattice histogram compared with uncorrelated sites.
//!
//! `cargo run --release --example measurement_shots`

use std::f64::consts::TAU;

use rydsim::lattice::{build_lattice, Boundary, LatticeKind, Symmetrization};
use rydsim::measure::{
    baseline_histogram, g2_connected, sample_shots, sublattice_histogram, sublattice_histogram_exact, CorrelationSource,
    DetectionErrors, Moments, ShotSource,
};
use rydsim::operator::{build_couplings, CouplingSpec, RydbergModel};
use rydsim::propagate::{evolve_unitary, EvolutionConfig, QuantumState};
use rydsim::schedule::{build_ramp, RampParams};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 1.0, 1.0)?;
    let model = RydbergModel::new(build_couplings(&geometry, CouplingSpec::isotropic_nn(TAU * 1.0))?)?;
    let schedule = build_ramp(&RampParams::detuning_scan(2.0))?;
    let state = evolve_unitary(&QuantumState::all_down(16)?, &schedule, &model, &EvolutionConfig::default())?
        .pop()
        .unwrap()
        .state;

    let errors = DetectionErrors::new(0.03, 0.08)?;
    let shots = sample_shots(ShotSource::State(&state), 1000, errors, 1)?;
    let exact = Moments::from_state(&state);
    println!(
        "density: exact {:.4}, expected after detection errors {:.4}, measured {:.4}",
        exact.mean_density(),
        errors.measured_density(exact.mean_density()),
        shots.mean_density()
    );
    println!("\nfirst shots (row by row, 1 = excited):");
    for s in shots.shots.iter().take(3) {
        let text: String = (0..16).map(|i| if s >> i & 1 == 1 { '1' } else { '0' }).collect();
        println!("  {} {} {} {}", &text[0..4], &text[4..8], &text[8..12], &text[12..16]);
    }

    let sampled = g2_connected(CorrelationSource::Shots(&shots), &geometry, 2, Symmetrization::Quadrants)?;
    let exact_map = g2_connected(CorrelationSource::Exact(&exact), &geometry, 2, Symmetrization::Quadrants)?;
    println!("\ng2 from 1000 shots vs exact:");
    for (s, e) in sampled.entries.iter().zip(&exact_map.entries) {
        println!("  ({},{})  {:+.4} +- {:.4}   exact {:+.4}", s.canonical.0, s.canonical.1, s.g2, s.stderr, e.g2);
    }

    let partition = geometry.neel_partition();
    let measured = sublattice_histogram(&shots, &partition)?;
    let ideal = sublattice_histogram_exact(16, &state.probabilities(), &partition)?;
    let baseline = baseline_histogram(shots.mean_density(), &partition)?;
    println!(
        "\nsublattice histogram: distance to exact {:.3}, to the uncorrelated baseline {:.3}",
        measured.total_variation(&ideal)?,
        measured.total_variation(&baseline)?
    );
    Ok(())
}
