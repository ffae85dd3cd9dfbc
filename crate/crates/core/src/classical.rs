//! Ground states of the classical model (`Omega = 0`).
//!
//! With the drive off every bitstring is an eigenstate with energy
//! `I(c) - x K(c)` in units of `U`, where `I` is the bond energy, `K` the
//! number of excitations and `x = hbar delta / U`. Energies are linear in
//! `x`, so everything follows from one table: the smallest bond energy
//! `I_min(K)` for each excitation number together with the number of
//! configurations attaining it. The ground state at `x` minimises
//! `I_min(K) - x K`; plateaus are the vertices of the lower convex hull of
//! the points `(K, I_min(K))` and plateau boundaries are its slopes.
//!
//! The table is computed exactly with integer bond energies, by a transfer
//! recursion over slices of the array (rows or columns, whichever is
//! narrower) or by exhaustive enumeration for small arrays.

use std::collections::BTreeMap;
use std::io::Write;

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{BondAxis, LatticeGeometry, Symmetrization};
use crate::measure::{g2_connected, CorrelationMap, CorrelationSource, Moments};
use crate::operator::CouplingSpec;

/// Default number of ground configurations listed before sampling.
pub const DEFAULT_LISTING_CAP: usize = 1_000_000;

/// Largest array for exhaustive enumeration.
pub const ENUMERATION_MAX_SITES: usize = 20;

/// Work bound (state pairs times excitation numbers) for the transfer
/// recursion.
const TRANSFER_WORK_LIMIT: u128 = 4_000_000_000;

/// Largest slice handled by the transfer recursion.
pub const TRANSFER_MAX_WIDTH: usize = 10;

/// Nearest-neighbour couplings in units of `U`, as exact rationals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassicalCouplings {
    /// Coupling on bonds along `a1`.
    pub horizontal: Rational64,
    /// Coupling on all other bonds.
    pub vertical: Rational64,
}

impl ClassicalCouplings {
    pub fn isotropic() -> Self {
        ClassicalCouplings {
            horizontal: Rational64::from_integer(1),
            vertical: Rational64::from_integer(1),
        }
    }

    pub fn new(horizontal: Rational64, vertical: Rational64) -> Result<Self> {
        if horizontal <= Rational64::from_integer(0) || vertical <= Rational64::from_integer(0) {
            return Err(Error::invalid(
                "couplings",
                "classical analysis needs repulsive couplings on every bond",
            ));
        }
        Ok(ClassicalCouplings {
            horizontal,
            vertical,
        })
    }

    /// Bond ratios of a nearest-neighbour coupling spec, measured in units
    /// of the horizontal coupling. Floating ratios are converted to the
    /// nearest simple fraction.
    pub fn from_spec(spec: CouplingSpec) -> Result<Self> {
        match spec {
            CouplingSpec::Nn { u_z, u_w } => {
                if !(u_z > 0.0 && u_w > 0.0) {
                    return Err(Error::invalid(
                        "couplings",
                        "classical analysis needs repulsive couplings on every bond",
                    ));
                }
                let ratio = Rational64::approximate_float(u_z / u_w)
                    .ok_or_else(|| Error::invalid("couplings", "coupling ratio not representable"))?;
                Self::new(Rational64::from_integer(1), ratio)
            }
            CouplingSpec::Vdw { .. } => Err(Error::invalid(
                "couplings.mode",
                "the classical analysis is restricted to nearest-neighbour couplings",
            )),
        }
    }

    /// Integer bond weights and the common denominator `q`: a bond energy
    /// `w` stands for `w / q` in units of `U`.
    fn integer_weights(&self) -> (i64, i64, i64) {
        let (a, b) = (*self.horizontal.denom(), *self.vertical.denom());
        let q = a / gcd_u128(a as u128, b as u128) as i64 * b;
        let h = self.horizontal.numer() * (q / self.horizontal.denom());
        let v = self.vertical.numer() * (q / self.vertical.denom());
        (h, v, q)
    }
}

/// How the bond-energy table was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassicalMethod {
    Transfer,
    Enumeration,
}

/// Minimal bond energy and its multiplicity for every excitation number.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalSpectrum {
    n_sites: usize,
    denominator: i64,
    /// `levels[K] = (I_min(K) * q, count)`; `None` if no configuration has
    /// `K` excitations (never happens for the arrays built here).
    levels: Vec<Option<(i64, u128)>>,
    method: ClassicalMethod,
}

/// Lowest classical level at one value of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundLevel {
    pub x: Rational64,
    /// Energy in units of `U`.
    pub energy: Rational64,
    /// Excitation numbers present in the ground manifold (several only at a
    /// plateau boundary).
    pub occupations: Vec<usize>,
    pub degeneracy: u128,
    /// Mean excitation number over the ground manifold divided by `N`.
    pub density: Rational64,
}

impl ClassicalSpectrum {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn method(&self) -> ClassicalMethod {
        self.method
    }

    /// Smallest bond energy with `k` excitations (units of `U`) and the
    /// number of configurations attaining it.
    pub fn level(&self, k: usize) -> Option<(Rational64, u128)> {
        self.levels
            .get(k)
            .copied()
            .flatten()
            .map(|(i, c)| (Rational64::new(i, self.denominator), c))
    }

    pub fn ground(&self, x: Rational64) -> GroundLevel {
        let mut best: Option<Rational64> = None;
        let mut occupations = Vec::new();
        for (k, level) in self.levels.iter().enumerate() {
            let Some((i, _)) = level else { continue };
            let e = Rational64::new(*i, self.denominator) - x * Rational64::from_integer(k as i64);
            match best {
                Some(b) if e > b => {}
                Some(b) if e == b => occupations.push(k),
                _ => {
                    best = Some(e);
                    occupations = vec![k];
                }
            }
        }
        let degeneracy: u128 = occupations
            .iter()
            .map(|&k| self.levels[k].expect("occupied level").1)
            .sum();
        let weighted: u128 = occupations
            .iter()
            .map(|&k| k as u128 * self.levels[k].expect("occupied level").1)
            .sum();
        let density = ratio_u128(weighted, degeneracy * self.n_sites as u128);
        GroundLevel {
            x,
            energy: best.expect("at least the empty configuration"),
            occupations,
            degeneracy,
            density,
        }
    }

    /// Plateaus of the ground-state density as `x` runs over the real line.
    pub fn phase_diagram(&self) -> PhaseDiagram {
        // Lower convex hull of (K, I_min(K)) scanned left to right.
        let points: Vec<(i64, Rational64)> = self
            .levels
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.map(|(i, _)| (k as i64, Rational64::new(i, self.denominator))))
            .collect();
        let mut hull: Vec<(i64, Rational64)> = Vec::new();
        for &p in &points {
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                // Drop b when it lies on or above the chord a-p.
                let lhs = (b.1 - a.1) * Rational64::from_integer(p.0 - a.0);
                let rhs = (p.1 - a.1) * Rational64::from_integer(b.0 - a.0);
                if lhs >= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        let n = self.n_sites as i64;
        let mut plateaus = Vec::with_capacity(hull.len());
        for (idx, &(k, _)) in hull.iter().enumerate() {
            let slope = |a: (i64, Rational64), b: (i64, Rational64)| {
                (b.1 - a.1) / Rational64::from_integer(b.0 - a.0)
            };
            let x_lo = (idx > 0).then(|| slope(hull[idx - 1], hull[idx]));
            let x_hi = (idx + 1 < hull.len()).then(|| slope(hull[idx], hull[idx + 1]));
            plateaus.push(Plateau {
                x_lo,
                x_hi,
                occupation: k as usize,
                density: Rational64::new(k, n),
                degeneracy: self.levels[k as usize].expect("hull point").1,
            });
        }
        let boundaries = plateaus
            .windows(2)
            .map(|w| {
                let x = w[0].x_hi.expect("interior boundary");
                let level = self.ground(x);
                PlateauBoundary {
                    x,
                    degeneracy: level.degeneracy,
                    density: level.density,
                    density_below: w[0].density,
                    density_above: w[1].density,
                }
            })
            .collect();
        PhaseDiagram {
            n_sites: self.n_sites,
            plateaus,
            boundaries,
        }
    }
}

fn ratio_u128(num: u128, den: u128) -> Rational64 {
    // Reduce before narrowing; degeneracies can exceed i64 only in
    // pathological cases, where a float approximation is acceptable.
    let g = gcd_u128(num, den);
    let (n, d) = (num / g, den / g);
    match (i64::try_from(n), i64::try_from(d)) {
        (Ok(n), Ok(d)) => Rational64::new(n, d),
        _ => Rational64::approximate_float(n as f64 / d as f64).unwrap_or_default(),
    }
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// One density plateau. Open ends are `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plateau {
    #[serde(serialize_with = "ser_opt_rational")]
    pub x_lo: Option<Rational64>,
    #[serde(serialize_with = "ser_opt_rational")]
    pub x_hi: Option<Rational64>,
    pub occupation: usize,
    #[serde(serialize_with = "ser_rational")]
    pub density: Rational64,
    pub degeneracy: u128,
}

/// Transition between two plateaus, where both ground manifolds (and any
/// collinear levels between them) are degenerate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlateauBoundary {
    #[serde(serialize_with = "ser_rational")]
    pub x: Rational64,
    pub degeneracy: u128,
    #[serde(serialize_with = "ser_rational")]
    pub density: Rational64,
    #[serde(serialize_with = "ser_rational")]
    pub density_below: Rational64,
    #[serde(serialize_with = "ser_rational")]
    pub density_above: Rational64,
}

fn ser_rational<S: serde::Serializer>(r: &Rational64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn ser_opt_rational<S: serde::Serializer>(
    r: &Option<Rational64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&r.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseDiagram {
    pub n_sites: usize,
    pub plateaus: Vec<Plateau>,
    pub boundaries: Vec<PlateauBoundary>,
}

impl PhaseDiagram {
    /// Plateaus whose interior meets the open interval `(lo, hi)`.
    pub fn plateaus_within(&self, lo: Rational64, hi: Rational64) -> usize {
        self.plateaus
            .iter()
            .filter(|p| p.x_lo.is_none_or(|a| a < hi) && p.x_hi.is_none_or(|b| b > lo))
            .count()
    }

    /// `x_lo,x_hi,density,degeneracy`; open ends are written as `-inf` and
    /// `inf`, rationals as `p/q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x_lo", "x_hi", "density", "degeneracy"])?;
        for p in &self.plateaus {
            w.write_record([
                p.x_lo.map_or("-inf".to_string(), |x| x.to_string()),
                p.x_hi.map_or("inf".to_string(), |x| x.to_string()),
                p.density.to_string(),
                p.degeneracy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

/// Point of a sampled density curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    /// Mean density over the full ground manifold.
    pub density: f64,
    pub degeneracy: u128,
    /// Densities of the plateaus just below and above `x`; they differ only
    /// when `x` is a plateau boundary.
    pub density_below: f64,
    pub density_above: f64,
}

/// Bond-energy table of a geometry, by transfer recursion when the array
/// has a narrow enough slice structure and by enumeration otherwise.
pub fn classical_spectrum(
    geometry: &LatticeGeometry,
    couplings: ClassicalCouplings,
) -> Result<ClassicalSpectrum> {
    match Transfer::new(geometry, couplings) {
        Ok(t) => Ok(t.spectrum()),
        Err(e) if geometry.len() <= ENUMERATION_MAX_SITES => {
            let _ = e;
            classical_spectrum_enumerated(geometry, couplings)
        }
        Err(e) => Err(e),
    }
}

/// Bond-energy table by visiting all `2^N` configurations.
pub fn classical_spectrum_enumerated(
    geometry: &LatticeGeometry,
    couplings: ClassicalCouplings,
) -> Result<ClassicalSpectrum> {
    let n = geometry.len();
    check_enumerable(n)?;
    let bonds = weighted_bonds(geometry, couplings);
    let (_, _, q) = couplings.integer_weights();
    let mut levels: Vec<Option<(i64, u128)>> = vec![None; n + 1];
    for c in 0..(1u64 << n) {
        let e = bond_energy(&bonds, c);
        merge(&mut levels[c.count_ones() as usize], e, 1);
    }
    Ok(ClassicalSpectrum {
        n_sites: n,
        denominator: q,
        levels,
        method: ClassicalMethod::Enumeration,
    })
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > ENUMERATION_MAX_SITES {
        return Err(Error::TooLarge {
            sites: n,
            limit: ENUMERATION_MAX_SITES,
            method: "classical enumeration",
        });
    }
    Ok(())
}

fn weighted_bonds(geometry: &LatticeGeometry, couplings: ClassicalCouplings) -> Vec<(u64, i64)> {
    let (h, v, _) = couplings.integer_weights();
    geometry
        .bonds()
        .iter()
        .map(|b| {
            let w = if b.axis == BondAxis::Horizontal { h } else { v };
            ((1u64 << b.i) | (1u64 << b.j), w)
        })
        .collect()
}

fn bond_energy(bonds: &[(u64, i64)], c: u64) -> i64 {
    bonds
        .iter()
        .filter(|(mask, _)| c & mask == *mask)
        .map(|(_, w)| w)
        .sum()
}

#[inline]
fn merge(slot: &mut Option<(i64, u128)>, energy: i64, count: u128) {
    match slot {
        Some((e, c)) if *e == energy => *c += count,
        Some((e, _)) if *e < energy => {}
        _ => *slot = Some((energy, count)),
    }
}

/// Options for listing ground configurations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ListingOptions {
    /// Largest manifold listed exhaustively.
    pub cap: usize,
    /// When the manifold exceeds `cap`, draw `cap` configurations uniformly
    /// (with replacement) using this seed instead of failing.
    pub sample_seed: Option<u64>,
}

impl Default for ListingOptions {
    fn default() -> Self {
        ListingOptions {
            cap: DEFAULT_LISTING_CAP,
            sample_seed: None,
        }
    }
}

/// Ground manifold at one value of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalGroundSet {
    pub n_sites: usize,
    pub level: GroundLevel,
    /// Ground configurations as bitstrings (bit `i` is site `i`), sorted.
    /// Either the complete manifold or a uniform sample of it.
    pub configurations: Vec<u64>,
    pub sampled: bool,
}

impl ClassicalGroundSet {
    pub fn degeneracy(&self) -> u128 {
        self.level.degeneracy
    }

    pub fn density(&self) -> f64 {
        rational_to_f64(self.level.density)
    }

    /// One bitstring per line, site 0 first.
    pub fn write_bitstrings<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut line = String::with_capacity(self.n_sites + 1);
        for &c in &self.configurations {
            line.clear();
            for i in 0..self.n_sites {
                line.push(if c >> i & 1 == 1 { '1' } else { '0' });
            }
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .map_err(|e| Error::io("bitstrings", e))?;
        }
        Ok(())
    }
}

pub fn rational_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Minimal-energy configurations at `x = hbar delta / U`.
pub fn classical_ground_states(
    geometry: &LatticeGeometry,
    couplings: ClassicalCouplings,
    x: Rational64,
    options: ListingOptions,
) -> Result<ClassicalGroundSet> {
    if geometry.len() > 64 {
        return Err(Error::TooLarge {
            sites: geometry.len(),
            limit: 64,
            method: "classical configuration listing",
        });
    }
    match Transfer::new(geometry, couplings) {
        Ok(t) => t.ground_states(x, options),
        Err(e) if geometry.len() <= ENUMERATION_MAX_SITES => {
            let _ = e;
            ground_states_enumerated(geometry, couplings, x, options)
        }
        Err(e) => Err(e),
    }
}

/// Same as [`classical_ground_states`] by exhaustive enumeration.
pub fn ground_states_enumerated(
    geometry: &LatticeGeometry,
    couplings: ClassicalCouplings,
    x: Rational64,
    options: ListingOptions,
) -> Result<ClassicalGroundSet> {
    let spectrum = classical_spectrum_enumerated(geometry, couplings)?;
    let level = spectrum.ground(x);
    check_cap(&level, options)?;
    let bonds = weighted_bonds(geometry, couplings);
    let n = geometry.len();
    let targets: BTreeMap<u32, i64> = level
        .occupations
        .iter()
        .map(|&k| (k as u32, spectrum.levels[k].expect("level").0))
        .collect();
    let mut all: Vec<u64> = (0..(1u64 << n))
        .filter(|&c| targets.get(&c.count_ones()) == Some(&bond_energy(&bonds, c)))
        .collect();
    let sampled = level.degeneracy > options.cap as u128;
    if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(options.sample_seed.expect("checked"));
        all = (0..options.cap)
            .map(|_| all[rng.gen_range(0..all.len())])
            .collect();
        all.sort_unstable();
    }
    Ok(ClassicalGroundSet {
        n_sites: n,
        level,
        configurations: all,
        sampled,
    })
}

fn check_cap(level: &GroundLevel, options: ListingOptions) -> Result<()> {
    if level.degeneracy > options.cap as u128 && options.sample_seed.is_none() {
        return Err(Error::DegeneracyCap {
            count: level.degeneracy,
            cap: options.cap,
        });
    }
    Ok(())
}

/// Ground-state density and degeneracy on a grid of `x` values. Grid
/// values are read as the nearest simple fraction, so `0.1` means `1/10`.
pub fn classical_density_curve(
    geometry: &LatticeGeometry,
    couplings: ClassicalCouplings,
    x_grid: &[f64],
) -> Result<Vec<CurvePoint>> {
    let spectrum = classical_spectrum(geometry, couplings)?;
    let diagram = spectrum.phase_diagram();
    x_grid
        .iter()
        .map(|&xf| {
            let x = to_rational(xf)?;
            let level = spectrum.ground(x);
            let below = diagram
                .plateaus
                .iter()
                .find(|p| p.x_lo.is_none_or(|a| a < x) && p.x_hi.is_none_or(|b| b >= x))
                .expect("plateaus cover the line");
            let above = diagram
                .plateaus
                .iter()
                .find(|p| p.x_lo.is_none_or(|a| a <= x) && p.x_hi.is_none_or(|b| b > x))
                .expect("plateaus cover the line");
            Ok(CurvePoint {
                x: xf,
                density: rational_to_f64(level.density),
                degeneracy: level.degeneracy,
                density_below: rational_to_f64(below.density),
                density_above: rational_to_f64(above.density),
            })
        })
        .collect()
}

pub fn to_rational(x: f64) -> Result<Rational64> {
    if !x.is_finite() {
        return Err(Error::invalid("x", "must be finite"));
    }
    Rational64::approximate_float(x).ok_or_else(|| Error::invalid("x", format!("{x} not representable")))
}

/// Connected correlations of the uniform mixture of the listed ground
/// configurations. Diagonal observables of the equal-weight superposition
/// coincide with those of the mixture.
pub fn classical_mixture_g2(
    ground: &ClassicalGroundSet,
    geometry: &LatticeGeometry,
    max_shell: usize,
    symmetrization: Symmetrization,
) -> Result<CorrelationMap> {
    if ground.n_sites != geometry.len() {
        return Err(Error::DimensionMismatch {
            expected: geometry.len(),
            found: ground.n_sites,
        });
    }
    let moments = Moments::from_configurations(ground.n_sites, &ground.configurations)?;
    g2_connected(CorrelationSource::Exact(&moments), geometry, max_shell, symmetrization)
}

/// Transfer recursion over slices of the array.
///
/// Each bond must join sites in the same slice or in neighbouring slices;
/// when bonds also join the last slice to the first (periodic arrays) the
/// first slice's state is fixed in an outer loop.
struct Transfer {
    n_sites: usize,
    denominator: i64,
    /// Site indices of each slice, bit `b` of a slice state is site
    /// `slices[s][b]`.
    slices: Vec<Vec<usize>>,
    /// Bond energy inside slice `s` for each state.
    intra: Vec<Vec<i64>>,
    /// Bond energy between slice `s` and `s + 1` (cyclically), indexed
    /// `prev * states + next`.
    inter: Vec<Vec<i64>>,
    cyclic: bool,
}

/// `table[state][K] = (min energy, count)` for prefixes ending in `state`.
type Table = Vec<Vec<Option<(i64, u128)>>>;

impl Transfer {
    fn new(geometry: &LatticeGeometry, couplings: ClassicalCouplings) -> Result<Self> {
        let n = geometry.len();
        let (width, height) = (geometry.width(), geometry.height());
        // Slice along the longer axis so slices are as narrow as possible.
        let by_rows = width <= height;
        let (count, size) = if by_rows { (height, width) } else { (width, height) };
        if size > TRANSFER_MAX_WIDTH {
            return Err(Error::TooLarge {
                sites: n,
                limit: TRANSFER_MAX_WIDTH,
                method: "classical transfer recursion (slice width)",
            });
        }
        let slices: Vec<Vec<usize>> = (0..count)
            .map(|s| {
                (0..size)
                    .map(|b| {
                        let (k, l) = if by_rows { (b, s) } else { (s, b) };
                        geometry
                            .site_at(k as i64, l as i64)
                            .expect("rectangular array")
                    })
                    .collect()
            })
            .collect();
        let mut slice_of = vec![(0usize, 0usize); n];
        for (s, members) in slices.iter().enumerate() {
            for (b, &site) in members.iter().enumerate() {
                slice_of[site] = (s, b);
            }
        }
        let (h, v, q) = couplings.integer_weights();
        let states = 1usize << size;
        let mut intra_bonds: Vec<Vec<(usize, usize, i64)>> = vec![Vec::new(); count];
        let mut inter_bonds: Vec<Vec<(usize, usize, i64)>> = vec![Vec::new(); count];
        let mut cyclic = false;
        for bond in geometry.bonds() {
            let w = if bond.axis == BondAxis::Horizontal { h } else { v };
            let (si, bi) = slice_of[bond.i];
            let (sj, bj) = slice_of[bond.j];
            if si == sj {
                intra_bonds[si].push((bi, bj, w));
            } else if sj == si + 1 {
                inter_bonds[si].push((bi, bj, w));
            } else if si == sj + 1 {
                inter_bonds[sj].push((bj, bi, w));
            } else if count >= 3 && si == count - 1 && sj == 0 {
                inter_bonds[si].push((bi, bj, w));
                cyclic = true;
            } else if count >= 3 && sj == count - 1 && si == 0 {
                inter_bonds[sj].push((bj, bi, w));
                cyclic = true;
            } else {
                return Err(Error::invalid(
                    "geometry",
                    "bonds do not follow a slice structure",
                ));
            }
        }
        let pair_states = (states as u128) * (states as u128);
        let work = pair_states * count as u128 * (n as u128 + 1) * if cyclic { states as u128 } else { 1 };
        if work > TRANSFER_WORK_LIMIT {
            return Err(Error::TooLarge {
                sites: n,
                limit: TRANSFER_MAX_WIDTH,
                method: "classical transfer recursion (work bound)",
            });
        }
        let intra = intra_bonds
            .iter()
            .map(|bonds| {
                (0..states)
                    .map(|s| {
                        bonds
                            .iter()
                            .filter(|&&(a, b, _)| s >> a & 1 == 1 && s >> b & 1 == 1)
                            .map(|&(_, _, w)| w)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let inter = inter_bonds
            .iter()
            .map(|bonds| {
                let mut table = vec![0i64; states * states];
                for prev in 0..states {
                    for next in 0..states {
                        table[prev * states + next] = bonds
                            .iter()
                            .filter(|&&(a, b, _)| prev >> a & 1 == 1 && next >> b & 1 == 1)
                            .map(|&(_, _, w)| w)
                            .sum();
                    }
                }
                table
            })
            .collect();
        Ok(Transfer {
            n_sites: n,
            denominator: q,
            slices,
            intra,
            inter,
            cyclic,
        })
    }

    fn states(&self) -> usize {
        1 << self.slices[0].len()
    }

    /// Forward tables for every slice, starting from the given first
    /// states.
    fn forward(&self, first: &[usize]) -> Vec<Table> {
        let states = self.states();
        let n = self.n_sites;
        let mut tables: Vec<Table> = Vec::with_capacity(self.slices.len());
        let mut t0: Table = vec![vec![None; n + 1]; states];
        for &s in first {
            t0[s][s.count_ones() as usize] = Some((self.intra[0][s], 1));
        }
        tables.push(t0);
        for j in 1..self.slices.len() {
            let prev = tables.last().expect("non-empty");
            let mut next: Table = vec![vec![None; n + 1]; states];
            for (t, row) in next.iter_mut().enumerate() {
                let pop = t.count_ones() as usize;
                let own = self.intra[j][t];
                for (s, entries) in prev.iter().enumerate() {
                    let link = self.inter[j - 1][s * states + t] + own;
                    for (k, entry) in entries.iter().enumerate() {
                        if let Some((e, c)) = entry {
                            merge(&mut row[k + pop], e + link, *c);
                        }
                    }
                }
            }
            tables.push(next);
        }
        tables
    }

    /// Closing energy between the last slice state and the first.
    fn closing(&self, last: usize, first: usize) -> i64 {
        if self.cyclic {
            self.inter[self.slices.len() - 1][last * self.states() + first]
        } else {
            0
        }
    }

    /// First-slice states to run separately: each one for a cyclic array,
    /// all together otherwise.
    fn starts(&self) -> Vec<Vec<usize>> {
        if self.cyclic {
            (0..self.states()).map(|s| vec![s]).collect()
        } else {
            vec![(0..self.states()).collect()]
        }
    }

    /// Per-start contributions to the level table.
    fn finals(&self, start: &[usize], tables: &[Table]) -> Vec<Option<(i64, u128)>> {
        let mut levels = vec![None; self.n_sites + 1];
        let last = tables.last().expect("non-empty");
        for (t, entries) in last.iter().enumerate() {
            let close = if self.cyclic { self.closing(t, start[0]) } else { 0 };
            for (k, entry) in entries.iter().enumerate() {
                if let Some((e, c)) = entry {
                    merge(&mut levels[k], e + close, *c);
                }
            }
        }
        levels
    }

    fn spectrum(&self) -> ClassicalSpectrum {
        let mut levels: Vec<Option<(i64, u128)>> = vec![None; self.n_sites + 1];
        for start in self.starts() {
            let tables = self.forward(&start);
            for (k, entry) in self.finals(&start, &tables).into_iter().enumerate() {
                if let Some((e, c)) = entry {
                    merge(&mut levels[k], e, c);
                }
            }
        }
        ClassicalSpectrum {
            n_sites: self.n_sites,
            denominator: self.denominator,
            levels,
            method: ClassicalMethod::Transfer,
        }
    }

    fn ground_states(&self, x: Rational64, options: ListingOptions) -> Result<ClassicalGroundSet> {
        let spectrum = self.spectrum();
        let level = spectrum.ground(x);
        check_cap(&level, options)?;
        let targets: Vec<(usize, i64)> = level
            .occupations
            .iter()
            .map(|&k| (k, spectrum.levels[k].expect("level").0))
            .collect();
        let sampled = level.degeneracy > options.cap as u128;
        let mut configurations = Vec::new();
        if sampled {
            let mut rng = ChaCha8Rng::seed_from_u64(options.sample_seed.expect("checked"));
            let mut draws: Vec<u128> = (0..options.cap)
                .map(|_| rng.gen_range(0..level.degeneracy))
                .collect();
            draws.sort_unstable();
            let mut offset = 0u128;
            let mut next_draw = 0;
            for start in self.starts() {
                let tables = self.forward(&start);
                for (t, entries) in tables.last().expect("non-empty").iter().enumerate() {
                    let close = self.closing(t, start[0]);
                    for &(k, target) in &targets {
                        let Some((e, c)) = entries[k] else { continue };
                        if e + close != target {
                            continue;
                        }
                        while next_draw < draws.len() && draws[next_draw] < offset + c {
                            let mut bits = 0u64;
                            self.pick(&tables, self.slices.len() - 1, t, k, e, draws[next_draw] - offset, &mut bits);
                            configurations.push(bits);
                            next_draw += 1;
                        }
                        offset += c;
                    }
                }
            }
        } else {
            for start in self.starts() {
                let tables = self.forward(&start);
                for (t, entries) in tables.last().expect("non-empty").iter().enumerate() {
                    let close = self.closing(t, start[0]);
                    for &(k, target) in &targets {
                        let Some((e, _)) = entries[k] else { continue };
                        if e + close == target {
                            self.collect(&tables, self.slices.len() - 1, t, k, e, 0, &mut configurations);
                        }
                    }
                }
            }
        }
        configurations.sort_unstable();
        Ok(ClassicalGroundSet {
            n_sites: self.n_sites,
            level,
            configurations,
            sampled,
        })
    }

    fn place(&self, slice: usize, state: usize) -> u64 {
        self.slices[slice]
            .iter()
            .enumerate()
            .filter(|(b, _)| state >> b & 1 == 1)
            .fold(0u64, |acc, (_, &site)| acc | 1u64 << site)
    }

    /// Optimal predecessors of `(slice, state, k, energy)` with their counts.
    fn predecessors<'a>(
        &'a self,
        tables: &'a [Table],
        slice: usize,
        state: usize,
        k: usize,
        energy: i64,
    ) -> impl Iterator<Item = (usize, usize, i64, u128)> + 'a {
        let states = self.states();
        let pop = state.count_ones() as usize;
        let own = self.intra[slice][state];
        (0..states).filter_map(move |s| {
            let kp = k.checked_sub(pop)?;
            let (e, c) = tables[slice - 1][s][kp]?;
            (e + self.inter[slice - 1][s * states + state] + own == energy).then_some((s, kp, e, c))
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn collect(
        &self,
        tables: &[Table],
        slice: usize,
        state: usize,
        k: usize,
        energy: i64,
        suffix: u64,
        out: &mut Vec<u64>,
    ) {
        let bits = suffix | self.place(slice, state);
        if slice == 0 {
            out.push(bits);
            return;
        }
        for (s, kp, e, _) in self.predecessors(tables, slice, state, k, energy) {
            self.collect(tables, slice - 1, s, kp, e, bits, out);
        }
    }

    /// The `rank`-th optimal configuration ending in `state`.
    #[allow(clippy::too_many_arguments)]
    fn pick(
        &self,
        tables: &[Table],
        slice: usize,
        state: usize,
        k: usize,
        energy: i64,
        mut rank: u128,
        bits: &mut u64,
    ) {
        *bits |= self.place(slice, state);
        if slice == 0 {
            return;
        }
        for (s, kp, e, c) in self.predecessors(tables, slice, state, k, energy) {
            if rank < c {
                self.pick(tables, slice - 1, s, kp, e, rank, bits);
                return;
            }
            rank -= c;
        }
        unreachable!("rank within the count of optimal prefixes");
    }
}
