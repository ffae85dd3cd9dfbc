//! Spreading of correlations during the time-trace ramp: staggered shell
//! averages and their threshold crossing times.
//!
//! `cargo run --release --example lightcone`

use std::f64::consts::TAU;

use rydsim::lattice::{build_lattice, Boundary, LatticeKind, Symmetrization};
use rydsim::measure::{g2_connected, lightcone_crossings, CorrelationSource, Moments};
use rydsim::operator::{build_couplings, CouplingSpec, RydbergModel};
use rydsim::propagate::{evolve_unitary, EvolutionConfig, QuantumState};
use rydsim::schedule::{build_ramp, RampParams};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 1.0, 1.0)?;
    let model = RydbergModel::new(build_couplings(&geometry, CouplingSpec::isotropic_nn(TAU * 2.7))?)?;
    let schedule = build_ramp(&RampParams::time_trace())?;
    let times: Vec<f64> = (0..=47).map(|i| 0.02 * i as f64).collect();
    let config = EvolutionConfig::default().with_snapshots(&times);
    let snapshots = evolve_unitary(&QuantumState::all_down(16)?, &schedule, &model, &config)?;

    let mut t_axis = Vec::new();
    let mut series = vec![Vec::new(); 3];
    for snap in snapshots.iter().filter(|s| times.iter().any(|t| (t - s.time).abs() < 1e-9)) {
        let moments = Moments::from_state(&snap.state);
        let map = g2_connected(CorrelationSource::Exact(&moments), &geometry, 3, Symmetrization::Quadrants)?;
        t_axis.push(snap.time);
        for m in 1..=3 {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            series[m - 1].push(sign * map.shell_average(m).unwrap_or(0.0));
        }
    }

    let result = lightcone_crossings(&t_axis, &series, &series, 0.2)?;
    println!("  t(us)   m=1      m=2      m=3   (normalised staggered shell averages)");
    for (i, t) in t_axis.iter().enumerate().step_by(4) {
        println!("  {t:5.2}  {:>6.3}  {:>7.3}  {:>7.3}", result.normalized[0][i], result.normalized[1][i], result.normalized[2][i]);
    }
    for (m, c) in result.crossings.iter().enumerate() {
        match c {
            Some(t) => println!("shell {} crosses 0.2 at {t:.3} us", m + 1),
            None => println!("shell {} never crosses 0.2", m + 1),
        }
    }
    println!("ordered: {}", result.ordered);
    Ok(())
}
