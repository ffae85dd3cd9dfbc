//! Local dephasing: quantum trajectories against the master equation on a
//! 2x3 array.
//!
//! `cargo run --release --example dephasing_trajectories`

use std::f64::consts::TAU;

use rydsim::lattice::{build_lattice, Boundary, LatticeKind, Symmetrization};
use rydsim::measure::{g2_connected, CorrelationSource, Moments};
use rydsim::openquantum::{
    evolve_master_direct, evolve_mcwf, DensityOperator, DephasingModel, MasterConfig, McwfConfig, Unraveling,
};
use rydsim::operator::{build_couplings, CouplingSpec, RydbergModel};
use rydsim::propagate::{evolve_unitary, EvolutionConfig, QuantumState};
use rydsim::schedule::{build_ramp, RampParams};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Square, &[3, 2], Boundary::Open, 1.0, 1.0)?;
    let u = TAU * 2.7;
    let model = RydbergModel::new(build_couplings(&geometry, CouplingSpec::isotropic_nn(u))?)?;
    let schedule = build_ramp(&RampParams::time_trace())?;
    let dephasing = DephasingModel::from_ratio(1.2, u)?;
    let psi = QuantumState::all_down(geometry.len())?;
    println!("gamma = {:.2} rad/us", dephasing.gamma);

    let coherent = evolve_unitary(&psi, &schedule, &model, &EvolutionConfig::default())?;
    let m = Moments::from_state(&coherent.last().unwrap().state);
    let g2 = g2_connected(CorrelationSource::Exact(&m), &geometry, 1, Symmetrization::Quadrants)?;
    println!("unitary:          n = {:.4}  g2(1,0) = {:+.4}", m.mean_density(), g2.get(1, 0).unwrap().g2);

    let rho = evolve_master_direct(&DensityOperator::pure(&psi)?, &schedule, &model, dephasing, &MasterConfig::default())?;
    let rho = rho.last().unwrap();
    let m = Moments::from_probabilities(geometry.len(), &rho.probabilities())?;
    let g2 = g2_connected(CorrelationSource::Exact(&m), &geometry, 1, Symmetrization::Quadrants)?;
    println!(
        "master equation:  n = {:.4}  g2(1,0) = {:+.4}  (purity {:.3})",
        m.mean_density(),
        g2.get(1, 0).unwrap().g2,
        rho.purity()
    );

    for unraveling in [Unraveling::Projector, Unraveling::PhaseFlip] {
        let mut config = McwfConfig::new(400, 7, EvolutionConfig::default());
        config.unraveling = unraveling;
        let ensemble = evolve_mcwf(&psi, &schedule, &model, dephasing, &config)?;
        let last = ensemble.last();
        let e = last.correlations(&geometry, 1)?;
        let e = e.get(1, 0).unwrap();
        println!(
            "{:<17} n = {:.4}  g2(1,0) = {:+.4} +- {:.4}  ({:.1} jumps per trajectory)",
            format!("{unraveling:?}:"),
            last.moments().mean_density(),
            e.g2,
            e.stderr,
            ensemble.total_jumps as f64 / ensemble.n_traj as f64
        );
    }
    Ok(())
}
