//! Arrays, displacement classes and shortest-path multiplicities.
//!
//! `cargo run --release --example lattice_geometry`

use rydsim::lattice::{
    build_lattice, count_shortest_paths, displacement_classes, Boundary, LatticeKind, Symmetrization,
};

fn main() -> rydsim::Result<()> {
    let square = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 5.0, 1.0)?;
    println!("4x4 square: {} sites, {} bonds", square.len(), square.bonds().len());

    println!("\nquadrant classes up to shell 3 (class, shell, ordered pairs, shortest paths):");
    for c in displacement_classes(&square, 3, Symmetrization::Quadrants)? {
        let (k, l) = c.canonical;
        println!(
            "  ({k},{l})  m={}  N={:>3}  paths={}",
            c.shell,
            c.pair_count(),
            count_shortest_paths(LatticeKind::Square, k, l)
        );
    }

    // A vertical stretch changes distances but not the bond graph.
    let stretched = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 5.0, 3f64.powf(1.0 / 6.0))?;
    println!(
        "\nvertical NN distance with distortion 3^(1/6): {:.3} um (horizontal {:.3} um)",
        stretched.distance_um(0, 4),
        stretched.distance_um(0, 1)
    );

    let tri = build_lattice(LatticeKind::Triangular, &[3, 3], Boundary::Open, 5.0, 1.0)?;
    let sublattices: Vec<usize> = (0..tri.len()).map(|i| tri.triangular_sublattice(i)).collect();
    println!("\n3x3 triangular sublattice labels: {sublattices:?}");
    println!("triangular paths to (1,-1): {}", count_shortest_paths(LatticeKind::Triangular, 1, -1));

    let ring = build_lattice(LatticeKind::Chain, &[8], Boundary::Periodic, 5.0, 1.0)?;
    println!("\n8-site ring neighbours of site 0: {:?}", ring.neighbors(0));
    println!("\ngeometry document of a 2x2 square:\n{}", build_lattice(LatticeKind::Square, &[2, 2], Boundary::Open, 5.0, 1.0)?.to_json()?);
    Ok(())
}
