//! Short-time power laws of the connected correlators under the
//! time-averaged Hamiltonian, compared with the leading-order expansion.
//!
//! `cargo run --release --example short_time_scaling`

use std::f64::consts::TAU;

use rydsim::lattice::{build_lattice, Boundary, LatticeKind};
use rydsim::operator::{build_couplings, CouplingSpec};
use rydsim::shorttime::{coefficient_text, verify_scaling, AveragedDrive};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Chain, &[6], Boundary::Open, 1.0, 1.0)?;
    let couplings = build_couplings(&geometry, CouplingSpec::isotropic_nn(TAU * 2.7))?;
    let drive = AveragedDrive {
        omega: TAU * 1.8,
        delta_avg: TAU * -0.75,
        duration: 1.0,
    };
    let grids: [&[f64]; 3] = [
        &[0.002, 0.003, 0.004, 0.006, 0.008, 0.012],
        &[0.006, 0.008, 0.011, 0.015, 0.02],
        &[0.02, 0.025, 0.03, 0.04, 0.05],
    ];
    for (m, grid) in (1..=3).zip(grids) {
        println!("m = {m}: g2 ~ {}", coefficient_text(m)?);
        let report = verify_scaling(&geometry, &couplings, &drive, m, grid)?;
        for class in &report.classes {
            println!(
                "  ({},{}): fitted exponent {:.3} (expected {}), measured/predicted {:.4}",
                class.k, class.l, class.exponent, class.expected_exponent, class.coefficient_ratio
            );
        }
    }
    Ok(())
}
