//! Array geometries: chain, square and triangular arrays, their
//! nearest-neighbour graphs, and the displacement classes used to average
//! pair correlators.
//!
//! Sites carry integer lattice coordinates `(k, l)` in the primitive basis.
//! For the triangular lattice the basis vectors are `a1 = (1, 0)` and
//! `a2 = (1/2, sqrt(3)/2)`, so the three bond directions are `a1`, `a2` and
//! `a1 - a2`. Shells are graph distances on the bond network, which for mixed
//! sign displacements on the triangular lattice is not `|k| + |l|`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Square,
    Triangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Orientation of a nearest-neighbour bond, used for anisotropic couplings.
///
/// `Horizontal` bonds run along `a1`; every other bond (the vertical square
/// bond and both inclined triangular bonds) is `Vertical`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondAxis {
    Horizontal,
    Vertical,
}

impl LatticeKind {
    /// Nearest-neighbour displacements in lattice coordinates.
    pub fn bond_directions(self) -> &'static [(i64, i64)] {
        match self {
            LatticeKind::Chain => &[(1, 0), (-1, 0)],
            LatticeKind::Square => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            LatticeKind::Triangular => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)],
        }
    }

    pub fn coordination(self) -> usize {
        self.bond_directions().len()
    }

    /// Graph distance from the origin to `(k, l)` on the infinite lattice, or
    /// `None` when the displacement is not reachable (chain with `l != 0`).
    pub fn distance(self, k: i64, l: i64) -> Option<usize> {
        let (a, b) = (k.unsigned_abs() as usize, l.unsigned_abs() as usize);
        match self {
            LatticeKind::Chain => (l == 0).then_some(a),
            LatticeKind::Square => Some(a + b),
            LatticeKind::Triangular => {
                if k.signum() * l.signum() >= 0 {
                    Some(a + b)
                } else {
                    Some(a.max(b))
                }
            }
        }
    }

    /// Position of lattice point `(k, l)` in units of the spacing, before
    /// distortion.
    fn unit_position(self, k: f64, l: f64) -> (f64, f64) {
        match self {
            LatticeKind::Chain | LatticeKind::Square => (k, l),
            LatticeKind::Triangular => (k + 0.5 * l, l * 3f64.sqrt() / 2.0),
        }
    }
}

fn binomial(n: u64, r: u64) -> u64 {
    let r = r.min(n - r);
    (0..r).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of minimal-length nearest-neighbour paths from the origin to
/// `(k, l)` on the infinite lattice. Zero when unreachable.
///
/// For `k, l >= 0` this is `binomial(k + l, l)` on both the square and the
/// triangular lattice; for mixed signs on the triangular lattice the shortest
/// paths combine `a1 - a2` hops with straight hops.
pub fn count_shortest_paths(kind: LatticeKind, k: i64, l: i64) -> u64 {
    let (a, b) = (k.unsigned_abs(), l.unsigned_abs());
    match kind {
        LatticeKind::Chain => u64::from(l == 0),
        LatticeKind::Square => binomial(a + b, b),
        LatticeKind::Triangular => {
            if k.signum() * l.signum() >= 0 {
                binomial(a + b, b)
            } else {
                binomial(a.max(b), a.min(b))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub index: usize,
    /// Position in micrometres.
    pub x: f64,
    pub y: f64,
    pub k: i64,
    pub l: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub axis: BondAxis,
}

#[derive(Clone, Debug)]
pub struct LatticeGeometry {
    kind: LatticeKind,
    /// Sites per axis: `[n]` for the chain, `[width, height]` otherwise.
    dimensions: Vec<usize>,
    boundary: Boundary,
    spacing_um: f64,
    distortion: f64,
    sites: Vec<Site>,
    neighbors: Vec<Vec<usize>>,
    bonds: Vec<Bond>,
    index_of: BTreeMap<(i64, i64), usize>,
}

/// Serialized form of a geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub kind: LatticeKind,
    pub dimensions: Vec<usize>,
    pub boundary: Boundary,
    pub spacing_um: f64,
    pub distortion: f64,
    pub sites: Vec<Site>,
}

/// Construct a geometry.
///
/// The chain takes one dimension, the 2d arrays take `[width, height]`.
/// Periodic boundaries wrap every axis and need at least three sites per
/// axis so that the bond graph stays simple. Vertical coordinates are
/// multiplied by `distortion`.
pub fn build_lattice(
    kind: LatticeKind,
    dimensions: &[usize],
    boundary: Boundary,
    spacing_um: f64,
    distortion: f64,
) -> Result<LatticeGeometry> {
    let expected = if kind == LatticeKind::Chain { 1 } else { 2 };
    if dimensions.len() != expected {
        return Err(Error::invalid(
            "dimensions",
            format!("{kind:?} needs {expected} dimension(s), got {}", dimensions.len()),
        ));
    }
    if dimensions.contains(&0) {
        return Err(Error::invalid("dimensions", "zero-size dimension"));
    }
    if !(spacing_um.is_finite() && spacing_um > 0.0) {
        return Err(Error::invalid("spacing_um", "must be positive and finite"));
    }
    if !(distortion.is_finite() && distortion > 0.0) {
        return Err(Error::invalid("distortion", "must be positive and finite"));
    }
    if boundary == Boundary::Periodic && dimensions.iter().any(|&d| d < 3) {
        return Err(Error::invalid(
            "boundary",
            "periodic arrays need at least 3 sites along every axis",
        ));
    }
    let width = dimensions[0];
    let height = dimensions.get(1).copied().unwrap_or(1);

    let mut sites = Vec::with_capacity(width * height);
    let mut index_of = BTreeMap::new();
    for l in 0..height as i64 {
        for k in 0..width as i64 {
            let (ux, uy) = kind.unit_position(k as f64, l as f64);
            let index = sites.len();
            sites.push(Site {
                index,
                x: ux * spacing_um,
                y: uy * spacing_um * distortion,
                k,
                l,
            });
            index_of.insert((k, l), index);
        }
    }

    let mut geometry = LatticeGeometry {
        kind,
        dimensions: dimensions.to_vec(),
        boundary,
        spacing_um,
        distortion,
        sites,
        neighbors: Vec::new(),
        bonds: Vec::new(),
        index_of,
    };
    geometry.build_graph();
    Ok(geometry)
}

impl LatticeGeometry {
    fn build_graph(&mut self) {
        let n = self.sites.len();
        let mut neighbors = vec![Vec::new(); n];
        let mut bonds = Vec::new();
        for site in &self.sites {
            for &(dk, dl) in self.kind.bond_directions() {
                let Some(j) = self.site_at(site.k + dk, site.l + dl) else {
                    continue;
                };
                if j == site.index || neighbors[site.index].contains(&j) {
                    continue;
                }
                neighbors[site.index].push(j);
                if site.index < j {
                    let axis = if dl == 0 {
                        BondAxis::Horizontal
                    } else {
                        BondAxis::Vertical
                    };
                    bonds.push(Bond {
                        i: site.index,
                        j,
                        axis,
                    });
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        bonds.sort();
        self.neighbors = neighbors;
        self.bonds = bonds;
    }

    /// Site at lattice coordinates `(k, l)`, wrapping periodic axes.
    pub fn site_at(&self, k: i64, l: i64) -> Option<usize> {
        let (k, l) = match self.boundary {
            Boundary::Open => (k, l),
            Boundary::Periodic => (
                k.rem_euclid(self.width() as i64),
                l.rem_euclid(self.height() as i64),
            ),
        };
        self.index_of.get(&(k, l)).copied()
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn dimensions(&self) -> &[usize] {
        &self.dimensions
    }

    pub fn width(&self) -> usize {
        self.dimensions[0]
    }

    pub fn height(&self) -> usize {
        self.dimensions.get(1).copied().unwrap_or(1)
    }

    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Nearest-neighbour bonds with `i < j`, sorted.
    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// Lattice displacement from site `i` to site `j`. On periodic arrays the
    /// image with the smallest graph distance is chosen (ties go to the
    /// image with components in `(-L/2, L/2]`).
    pub fn displacement(&self, i: usize, j: usize) -> (i64, i64) {
        let (a, b) = (&self.sites[i], &self.sites[j]);
        let (dk, dl) = (b.k - a.k, b.l - a.l);
        if self.boundary == Boundary::Open {
            return (dk, dl);
        }
        let (w, h) = (self.width() as i64, self.height() as i64);
        let wrap = |d: i64, n: i64| {
            let r = d.rem_euclid(n);
            if r > n / 2 {
                r - n
            } else {
                r
            }
        };
        let base = (wrap(dk, w), wrap(dl, h));
        if self.kind == LatticeKind::Chain {
            return (base.0, 0);
        }
        let mut best = base;
        let mut best_d = self.kind.distance(base.0, base.1).unwrap_or(usize::MAX);
        for sk in [-1i64, 0, 1] {
            for sl in [-1i64, 0, 1] {
                let cand = (base.0 + sk * w, base.1 + sl * h);
                let d = self.kind.distance(cand.0, cand.1).unwrap_or(usize::MAX);
                if d < best_d {
                    best = cand;
                    best_d = d;
                }
            }
        }
        best
    }

    /// Graph distance between two sites.
    pub fn shell(&self, i: usize, j: usize) -> usize {
        let (k, l) = self.displacement(i, j);
        self.kind
            .distance(k, l)
            .expect("displacements between sites are always reachable")
    }

    /// Euclidean separation in micrometres (minimum image on periodic arrays).
    pub fn distance_um(&self, i: usize, j: usize) -> f64 {
        let (k, l) = self.displacement(i, j);
        let (ux, uy) = self.kind.unit_position(k as f64, l as f64);
        let dx = ux * self.spacing_um;
        let dy = uy * self.spacing_um * self.distortion;
        dx.hypot(dy)
    }

    /// Two-colouring by parity of `k + l` (the Néel sublattices of the chain
    /// and square arrays). Returns `(A, B)` with `A` holding even parity.
    pub fn neel_partition(&self) -> Partition {
        let (a, b): (Vec<&Site>, Vec<&Site>) = self
            .sites
            .iter()
            .partition(|s| (s.k + s.l).rem_euclid(2) == 0);
        Partition {
            a: a.iter().map(|s| s.index).collect(),
            b: b.iter().map(|s| s.index).collect(),
        }
    }

    /// Three-sublattice label `(k + 2l) mod 3` of the triangular lattice.
    pub fn triangular_sublattice(&self, i: usize) -> usize {
        let s = &self.sites[i];
        (s.k + 2 * s.l).rem_euclid(3) as usize
    }

    pub fn to_document(&self) -> GeometryDocument {
        GeometryDocument {
            kind: self.kind,
            dimensions: self.dimensions.clone(),
            boundary: self.boundary,
            spacing_um: self.spacing_um,
            distortion: self.distortion,
            sites: self.sites.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    /// Rebuild a geometry from its JSON document. The site list must match
    /// what the header parameters generate.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GeometryDocument = serde_json::from_str(text)?;
        let geometry = build_lattice(
            doc.kind,
            &doc.dimensions,
            doc.boundary,
            doc.spacing_um,
            doc.distortion,
        )?;
        let consistent = doc.sites.len() == geometry.len()
            && doc.sites.iter().zip(&geometry.sites).all(|(a, b)| {
                a.index == b.index
                    && a.k == b.k
                    && a.l == b.l
                    && (a.x - b.x).abs() < 1e-9
                    && (a.y - b.y).abs() < 1e-9
            });
        if !consistent {
            return Err(Error::invalid(
                "sites",
                "site list does not match the geometry parameters",
            ));
        }
        Ok(geometry)
    }
}

/// Disjoint split of the sites into two groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

/// How raw pair displacements are merged into classes.
///
/// A connected pair correlator is symmetric in its two sites, so `d` and
/// `-d` are always merged: every class counts both orders of each pair.
/// `None` and `Inversion` therefore produce the same grouping; `Inversion`
/// is the name used for the triangular default. `Quadrants` additionally
/// merges `(±k, ±l)` and is only a lattice symmetry of chains and squares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrization {
    None,
    Inversion,
    Quadrants,
}

impl Symmetrization {
    pub fn default_for(kind: LatticeKind) -> Self {
        match kind {
            LatticeKind::Chain | LatticeKind::Square => Symmetrization::Quadrants,
            LatticeKind::Triangular => Symmetrization::Inversion,
        }
    }

    fn canonical(self, (k, l): (i64, i64)) -> (i64, i64) {
        match self {
            Symmetrization::Quadrants => (k.abs(), l.abs()),
            Symmetrization::None | Symmetrization::Inversion => {
                if k < 0 || (k == 0 && l < 0) {
                    (-k, -l)
                } else {
                    (k, l)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplacementClass {
    /// Representative displacement `(k, l)`.
    pub canonical: (i64, i64),
    /// Distinct raw displacements merged into this class.
    pub members: Vec<(i64, i64)>,
    /// Ordered site pairs `(i, j)` whose displacement is a member.
    pub pairs: Vec<(usize, usize)>,
    /// Graph distance `m`.
    pub shell: usize,
}

impl DisplacementClass {
    /// `N_{k,l}`: the number of ordered pairs.
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

/// Group all ordered pairs of distinct sites with shell `1..=max_shell`.
/// Classes come out sorted by shell, then by canonical displacement.
pub fn displacement_classes(
    geometry: &LatticeGeometry,
    max_shell: usize,
    symmetrization: Symmetrization,
) -> Result<Vec<DisplacementClass>> {
    if max_shell == 0 {
        return Err(Error::invalid("max_shell", "must be at least 1"));
    }
    if symmetrization == Symmetrization::Quadrants && geometry.kind() == LatticeKind::Triangular {
        return Err(Error::invalid(
            "symmetrization",
            "quadrant reflections are not symmetries of the triangular lattice",
        ));
    }
    let mut grouped: BTreeMap<(usize, (i64, i64)), DisplacementClass> = BTreeMap::new();
    let n = geometry.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = geometry.displacement(i, j);
            let shell = geometry.shell(i, j);
            if shell > max_shell {
                continue;
            }
            let key = symmetrization.canonical(d);
            let class = grouped
                .entry((shell, key))
                .or_insert_with(|| DisplacementClass {
                    canonical: key,
                    members: Vec::new(),
                    pairs: Vec::new(),
                    shell,
                });
            if !class.members.contains(&d) {
                class.members.push(d);
            }
            class.pairs.push((i, j));
        }
    }
    Ok(grouped
        .into_values()
        .map(|mut c| {
            c.members.sort_unstable();
            c
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(w: usize, h: usize) -> LatticeGeometry {
        build_lattice(LatticeKind::Square, &[w, h], Boundary::Open, 10.0, 1.0).unwrap()
    }

    #[test]
    fn periodic_chain_has_two_neighbors_everywhere() {
        let g = build_lattice(LatticeKind::Chain, &[24], Boundary::Periodic, 10.0, 1.0).unwrap();
        assert_eq!(g.len(), 24);
        assert!((0..24).all(|i| g.neighbors(i).len() == 2));
        assert_eq!(g.bonds().len(), 24);
    }

    #[test]
    fn square_bond_count() {
        let g = square(4, 4);
        assert_eq!(g.len(), 16);
        assert_eq!(g.bonds().len(), 24);
    }

    #[test]
    fn triangular_interior_coordination() {
        let g =
            build_lattice(LatticeKind::Triangular, &[6, 6], Boundary::Open, 10.0, 1.0).unwrap();
        let interior = g.site_at(2, 2).unwrap();
        assert_eq!(g.neighbors(interior).len(), 6);
        for &j in g.neighbors(interior) {
            assert!((g.distance_um(interior, j) - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_lattice(LatticeKind::Square, &[0, 4], Boundary::Open, 1.0, 1.0).is_err());
        assert!(build_lattice(LatticeKind::Square, &[4], Boundary::Open, 1.0, 1.0).is_err());
        assert!(build_lattice(LatticeKind::Chain, &[2], Boundary::Periodic, 1.0, 1.0).is_err());
        assert!(build_lattice(LatticeKind::Chain, &[5], Boundary::Open, -1.0, 1.0).is_err());
        assert!(build_lattice(LatticeKind::Chain, &[5], Boundary::Open, 1.0, 0.0).is_err());
    }

    #[test]
    fn class_pair_counts() {
        let g = square(4, 4);
        let raw = displacement_classes(&g, 4, Symmetrization::None).unwrap();
        let horizontal = raw.iter().find(|c| c.canonical == (1, 0)).unwrap();
        assert_eq!(horizontal.pair_count(), 24);

        let quad = displacement_classes(&g, 4, Symmetrization::Quadrants).unwrap();
        let diagonal = quad.iter().find(|c| c.canonical == (1, 1)).unwrap();
        assert_eq!(diagonal.pair_count(), 36);
        assert_eq!(diagonal.members.len(), 4);

        let ring = build_lattice(LatticeKind::Chain, &[24], Boundary::Periodic, 1.0, 1.0).unwrap();
        let classes = displacement_classes(&ring, 12, Symmetrization::Quadrants).unwrap();
        assert_eq!(classes[0].canonical, (1, 0));
        assert_eq!(classes[0].pair_count(), 48);
        let total: usize = classes.iter().map(|c| c.pair_count()).sum();
        assert_eq!(total, 24 * 23);
    }

    #[test]
    fn quadrants_rejected_on_triangular() {
        let g =
            build_lattice(LatticeKind::Triangular, &[3, 3], Boundary::Open, 1.0, 1.0).unwrap();
        assert!(displacement_classes(&g, 2, Symmetrization::Quadrants).is_err());
        assert!(displacement_classes(&g, 0, Symmetrization::None).is_err());
    }

    #[test]
    fn path_counts() {
        assert_eq!(count_shortest_paths(LatticeKind::Square, 1, 0), 1);
        assert_eq!(count_shortest_paths(LatticeKind::Square, 1, 1), 2);
        assert_eq!(count_shortest_paths(LatticeKind::Square, 2, 1), 3);
        assert_eq!(count_shortest_paths(LatticeKind::Triangular, 1, -1), 1);
        assert_eq!(count_shortest_paths(LatticeKind::Triangular, 2, -1), 2);
        assert_eq!(count_shortest_paths(LatticeKind::Chain, 3, 0), 1);
        assert_eq!(count_shortest_paths(LatticeKind::Chain, 3, 1), 0);
    }

    #[test]
    fn distortion_scales_vertical_distances_only() {
        let lambda = 3f64.powf(1.0 / 6.0);
        let g = build_lattice(LatticeKind::Square, &[3, 3], Boundary::Open, 5.0, lambda).unwrap();
        let plain = square(3, 3);
        assert_eq!(g.bonds(), plain.bonds());
        assert!((g.distance_um(0, 1) - 5.0).abs() < 1e-12);
        assert!((g.distance_um(0, 3) - 5.0 * lambda).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let g =
            build_lattice(LatticeKind::Triangular, &[3, 4], Boundary::Open, 7.5, 1.1).unwrap();
        let text = g.to_json().unwrap();
        let back = LatticeGeometry::from_json(&text).unwrap();
        assert_eq!(back.sites(), g.sites());
        let mut tampered: GeometryDocument = serde_json::from_str(&text).unwrap();
        tampered.sites[3].k = 99;
        let text = serde_json::to_string(&tampered).unwrap();
        assert!(LatticeGeometry::from_json(&text).is_err());
    }

    #[test]
    fn triangular_sublattices_differ_across_bonds() {
        let g =
            build_lattice(LatticeKind::Triangular, &[6, 6], Boundary::Periodic, 1.0, 1.0).unwrap();
        for b in g.bonds() {
            assert_ne!(g.triangular_sublattice(b.i), g.triangular_sublattice(b.j));
        }
    }
}
