//! Classical (Omega = 0) ground states: density plateaus and degeneracies.
//!
//! `cargo run --release --example classical_diagram`

use num_rational::Rational64;
use rydsim::classical::{classical_ground_states, classical_spectrum, ClassicalCouplings, ListingOptions};
use rydsim::lattice::{build_lattice, Boundary, LatticeKind};

fn main() -> rydsim::Result<()> {
    let arrays = [
        ("6x6 square, open", LatticeKind::Square, Boundary::Open),
        ("6x6 square, periodic", LatticeKind::Square, Boundary::Periodic),
        ("6x6 triangular, periodic", LatticeKind::Triangular, Boundary::Periodic),
    ];
    for (name, kind, boundary) in arrays {
        let geometry = build_lattice(kind, &[6, 6], boundary, 1.0, 1.0)?;
        let diagram = classical_spectrum(&geometry, ClassicalCouplings::isotropic())?.phase_diagram();
        println!("{name}:");
        for p in &diagram.plateaus {
            let end = |x: Option<Rational64>, inf: &str| x.map_or(inf.to_string(), |x| x.to_string());
            println!(
                "  x in ({:>5}, {:>5})  n = {:<5}  degeneracy {}",
                end(p.x_lo, "-inf"),
                end(p.x_hi, "inf"),
                p.density.to_string(),
                p.degeneracy
            );
        }
        println!();
    }

    let geometry = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 1.0, 1.0)?;
    let ground = classical_ground_states(
        &geometry,
        ClassicalCouplings::isotropic(),
        Rational64::new(5, 2),
        ListingOptions::default(),
    )?;
    println!("4x4 open square at x = 5/2: {} ground configurations", ground.degeneracy());
    for c in ground.configurations.iter().take(4) {
        println!("  {c:016b}");
    }
    Ok(())
}
