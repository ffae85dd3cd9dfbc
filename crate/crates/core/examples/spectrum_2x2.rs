//! Low-lying levels of a 2x2 plaquette for repulsive and attractive
//! interactions as the detuning is swept.
//!
//! `cargo run --release --example spectrum_2x2`

use rydsim::lattice::{build_lattice, Boundary, LatticeKind};
use rydsim::operator::{build_couplings, spectrum_at, CouplingMap, CouplingSpec, RydbergModel};

fn main() -> rydsim::Result<()> {
    let geometry = build_lattice(LatticeKind::Square, &[2, 2], Boundary::Open, 1.0, 1.0)?;
    let u = 1.0;
    let repulsive = build_couplings(&geometry, CouplingSpec::isotropic_nn(u))?;
    let negated: Vec<(usize, usize, f64)> = repulsive.entries().iter().map(|&(i, j, v)| (i, j, -v)).collect();
    let attractive = CouplingMap::from_entries(4, &negated)?;

    for (name, couplings) in [("U > 0", repulsive), ("U < 0", attractive)] {
        let model = RydbergModel::new(couplings)?;
        println!("{name}, hbar Omega = 0.5 U (energies / U):");
        println!("  delta/U   E0       E1       E2       gap");
        for i in 0..=6 {
            let d = -2.0 + i as f64;
            let s = spectrum_at(&model, 0.5 * u, d * u, 3, false)?;
            let e = &s.values;
            println!("  {d:>5.1}  {:>7.3}  {:>7.3}  {:>7.3}  {:>6.3}", e[0], e[1], e[2], e[1] - e[0]);
        }
        println!();
    }
    Ok(())
}
