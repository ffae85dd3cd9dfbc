//! Coherent ramp on a 4x4 array: densities, correlation map, structure
//! factor and correlation length.
//!
//! `cargo run --release --example unitary_ramp`

use std::f64::consts::TAU;

use rydsim::lattice::{build_lattice, Boundary, LatticeKind, Symmetrization};
use rydsim::measure::{fit_correlation_length, g2_connected, neel_structure_factor, CorrelationSource, Moments, NEEL_CUTOFF};
use rydsim::operator::{build_couplings, CouplingSpec, RydbergModel};
use rydsim::propagate::{evolve_unitary, EvolutionConfig, QuantumState};
use rydsim::schedule::{build_ramp, RampParams};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 1.0, 1.0)?;
    let couplings = build_couplings(&geometry, CouplingSpec::isotropic_nn(TAU * 2.7))?;
    let model = RydbergModel::new(couplings)?;
    let schedule = build_ramp(&RampParams::time_trace())?;

    let start = std::time::Instant::now();
    let snapshots = evolve_unitary(&QuantumState::all_down(16)?, &schedule, &model, &EvolutionConfig::default())?;
    let state = &snapshots.last().expect("final state").state;
    println!("evolved 2^16 amplitudes over {:.2} us in {:.1?}", schedule.total_duration(), start.elapsed());

    let moments = Moments::from_state(state);
    println!("\nRydberg densities:");
    for row in moments.density().chunks(4) {
        println!("  {}", row.iter().map(|n| format!("{n:.3}")).collect::<Vec<_>>().join("  "));
    }

    let map = g2_connected(CorrelationSource::Exact(&moments), &geometry, 6, Symmetrization::Quadrants)?;
    println!("\ng2(k,l):");
    for e in &map.entries {
        println!("  ({},{})  m={}  {:+.4}", e.canonical.0, e.canonical.1, e.shell, e.g2);
    }
    let s = neel_structure_factor(&map, NEEL_CUTOFF)?;
    println!("\nS_Neel = {:.3}", s.value);
    match fit_correlation_length(&map) {
        Ok(xi) => println!("xi = {:.2} sites from shells {:?}", xi.xi, xi.shells_used),
        Err(e) => println!("no correlation length: {e}"),
    }
    Ok(())
}
