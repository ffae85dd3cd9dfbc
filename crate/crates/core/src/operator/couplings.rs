use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BondAxis, LatticeGeometry};
use crate::units::mhz_to_angular;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    /// Full `C6 / r^6` tail between every pair.
    Vdw,
    /// Nearest-neighbour bonds only.
    Nn,
}

/// Couplings in internal units (rad/us, um).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingSpec {
    /// `U_ij = c6 / r_ij^6`, `c6` in rad/us um^6. Negative `c6` is the
    /// attractive case.
    Vdw { c6: f64 },
    /// Bond couplings: `u_z` on vertical bonds, `u_w` on horizontal ones.
    Nn { u_z: f64, u_w: f64 },
}

impl CouplingSpec {
    pub fn isotropic_nn(u: f64) -> Self {
        CouplingSpec::Nn { u_z: u, u_w: u }
    }

    /// Van der Waals tail normalised so that a horizontal bond of the
    /// undistorted array has coupling `u_nn`.
    pub fn vdw_from_nn(u_nn: f64, spacing_um: f64) -> Self {
        CouplingSpec::Vdw {
            c6: u_nn * spacing_um.powi(6),
        }
    }
}

/// Coupling block of a config file. Frequencies are `E/h` in MHz; `c6` is
/// `C6/h` in MHz um^6. In vdw mode either `c6` or `u_nn_mhz` must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    pub mode: CouplingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c6: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_nn_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_z_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_w_mhz: Option<f64>,
}

impl CouplingParams {
    pub fn nn(u_mhz: f64) -> Self {
        CouplingParams {
            mode: CouplingMode::Nn,
            c6: None,
            u_nn_mhz: Some(u_mhz),
            u_z_mhz: None,
            u_w_mhz: None,
        }
    }

    pub fn vdw(u_nn_mhz: f64) -> Self {
        CouplingParams {
            mode: CouplingMode::Vdw,
            ..CouplingParams::nn(u_nn_mhz)
        }
    }

    /// Isotropic nearest-neighbour coupling in rad/us, if one is defined.
    pub fn nn_scale(&self, spacing_um: f64) -> Option<f64> {
        match (self.u_nn_mhz, self.c6) {
            (Some(u), _) => Some(mhz_to_angular(u)),
            (None, Some(c6)) => Some(mhz_to_angular(c6) / spacing_um.powi(6)),
            _ => self.u_w_mhz.map(mhz_to_angular),
        }
    }

    pub fn resolve(&self, spacing_um: f64) -> Result<CouplingSpec> {
        match self.mode {
            CouplingMode::Vdw => match (self.c6, self.u_nn_mhz) {
                (Some(c6), None) => Ok(CouplingSpec::Vdw {
                    c6: mhz_to_angular(c6),
                }),
                (None, Some(u)) => Ok(CouplingSpec::vdw_from_nn(mhz_to_angular(u), spacing_um)),
                _ => Err(Error::invalid(
                    "couplings.c6",
                    "vdw mode needs exactly one of c6, u_nn_mhz",
                )),
            },
            CouplingMode::Nn => {
                let (u_z, u_w) = match (self.u_nn_mhz, self.u_z_mhz, self.u_w_mhz) {
                    (Some(u), None, None) => (u, u),
                    (None, Some(z), Some(w)) => (z, w),
                    _ => {
                        return Err(Error::invalid(
                            "couplings.u_nn_mhz",
                            "nn mode needs u_nn_mhz or both u_z_mhz and u_w_mhz",
                        ))
                    }
                };
                Ok(CouplingSpec::Nn {
                    u_z: mhz_to_angular(u_z),
                    u_w: mhz_to_angular(u_w),
                })
            }
        }
    }
}

/// Symmetric pair couplings `U_ij`, stored once per unordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMap {
    n_sites: usize,
    mode: CouplingMode,
    spec: CouplingSpec,
    /// `(i, j, U_ij)` with `i < j`, zero couplings omitted.
    entries: Vec<(usize, usize, f64)>,
}

pub fn build_couplings(geometry: &LatticeGeometry, spec: CouplingSpec) -> Result<CouplingMap> {
    let n = geometry.len();
    let mut entries = Vec::new();
    let mode = match spec {
        CouplingSpec::Vdw { c6 } => {
            if !c6.is_finite() || c6 == 0.0 {
                return Err(Error::invalid("c6", "must be finite and non-zero"));
            }
            for i in 0..n {
                for j in i + 1..n {
                    let r = geometry.distance_um(i, j);
                    if r <= 1e-9 {
                        return Err(Error::invalid(
                            "geometry",
                            format!("sites {i} and {j} coincide"),
                        ));
                    }
                    entries.push((i, j, c6 / r.powi(6)));
                }
            }
            CouplingMode::Vdw
        }
        CouplingSpec::Nn { u_z, u_w } => {
            if !(u_z.is_finite() && u_w.is_finite()) {
                return Err(Error::invalid("u_nn", "must be finite"));
            }
            for bond in geometry.bonds() {
                let u = match bond.axis {
                    BondAxis::Horizontal => u_w,
                    BondAxis::Vertical => u_z,
                };
                if u != 0.0 {
                    entries.push((bond.i, bond.j, u));
                }
            }
            CouplingMode::Nn
        }
    };
    Ok(CouplingMap {
        n_sites: n,
        mode,
        spec,
        entries,
    })
}

impl CouplingMap {
    /// Couplings from an explicit list of `(i, j, U_ij)`.
    pub fn from_entries(n_sites: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for &(i, j, u) in entries {
            if i == j || i >= n_sites || j >= n_sites {
                return Err(Error::invalid("couplings", format!("bad pair ({i}, {j})")));
            }
            let (a, b) = (i.min(j), i.max(j));
            if out.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
                return Err(Error::invalid("couplings", format!("duplicate pair ({a}, {b})")));
            }
            out.push((a, b, u));
        }
        out.sort_by_key(|x| (x.0, x.1));
        Ok(CouplingMap {
            n_sites,
            mode: CouplingMode::Vdw,
            spec: CouplingSpec::Vdw { c6: f64::NAN },
            entries: out,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn spec(&self) -> CouplingSpec {
        self.spec
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.entries
            .iter()
            .find(|&&(a, b, _)| (a, b) == key)
            .map_or(0.0, |e| e.2)
    }

    /// True when the dominant couplings are negative.
    pub fn is_attractive(&self) -> bool {
        self.entries.iter().map(|e| e.2).sum::<f64>() < 0.0
    }

    /// Negated couplings. For attractive interactions, evolving the
    /// all-down state under `H(U, delta(t), Omega(t))` gives the same
    /// occupation statistics as evolving under `H(-U, -delta(t), Omega(t))`,
    /// because `-H` is the complex conjugate generator and the sign of
    /// `Omega` is a gauge choice. Pair with [`crate::schedule::RampSchedule::mirrored`].
    pub fn repulsive_frame(&self) -> CouplingMap {
        let spec = match self.spec {
            CouplingSpec::Vdw { c6 } => CouplingSpec::Vdw { c6: -c6 },
            CouplingSpec::Nn { u_z, u_w } => CouplingSpec::Nn {
                u_z: -u_z,
                u_w: -u_w,
            },
        };
        CouplingMap {
            spec,
            entries: self.entries.iter().map(|&(i, j, u)| (i, j, -u)).collect(),
            ..self.clone()
        }
    }

    /// Interaction energy `sum_{i<j} U_ij n_i n_j` of a configuration.
    pub fn interaction_energy(&self, bits: u64) -> f64 {
        self.entries
            .iter()
            .filter(|&&(i, j, _)| bits >> i & 1 == 1 && bits >> j & 1 == 1)
            .map(|e| e.2)
            .sum()
    }

    /// CSV dump with header `i,j,U_radpus`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "U_radpus"])?;
        for &(i, j, u) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), format!("{u:.17e}")])?;
        }
        w.flush().map_err(|e| Error::io("couplings.csv", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};

    #[test]
    fn two_atoms() {
        let g = build_lattice(LatticeKind::Chain, &[2], Boundary::Open, 6.0, 1.0).unwrap();
        let c = build_couplings(&g, CouplingSpec::Vdw { c6: 5000.0 }).unwrap();
        assert!((c.get(0, 1) - 5000.0 / 6f64.powi(6)).abs() < 1e-12);
        assert_eq!(c.get(1, 0), c.get(0, 1));
    }

    #[test]
    fn diagonal_coupling_is_an_eighth() {
        let g = build_lattice(LatticeKind::Square, &[3, 3], Boundary::Open, 5.0, 1.0).unwrap();
        let c = build_couplings(&g, CouplingSpec::vdw_from_nn(2.0, 5.0)).unwrap();
        assert!((c.get(0, 1) - 2.0).abs() < 1e-12);
        assert!((c.get(0, 4) - 2.0 / 8.0).abs() < 1e-12);
        assert!((c.get(0, 2) - 2.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn distortion_divides_vertical_coupling_by_three() {
        let lambda = 3f64.powf(1.0 / 6.0);
        let g = build_lattice(LatticeKind::Square, &[2, 2], Boundary::Open, 5.0, lambda).unwrap();
        let c = build_couplings(&g, CouplingSpec::vdw_from_nn(3.0, 5.0)).unwrap();
        assert!((c.get(0, 1) - 3.0).abs() < 1e-12);
        assert!((c.get(0, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nn_mode_is_bond_only_and_anisotropic() {
        let g = build_lattice(LatticeKind::Square, &[3, 3], Boundary::Open, 5.0, 1.0).unwrap();
        let c = build_couplings(&g, CouplingSpec::Nn { u_z: 2.0, u_w: 1.0 }).unwrap();
        assert_eq!(c.entries().len(), 12);
        assert_eq!(c.get(0, 1), 1.0);
        assert_eq!(c.get(0, 3), 2.0);
        assert_eq!(c.get(0, 4), 0.0);
    }

    #[test]
    fn errors() {
        let g = build_lattice(LatticeKind::Chain, &[3], Boundary::Open, 5.0, 1.0).unwrap();
        assert!(build_couplings(&g, CouplingSpec::Vdw { c6: 0.0 }).is_err());
        assert!(CouplingMap::from_entries(3, &[(0, 0, 1.0)]).is_err());
        assert!(CouplingMap::from_entries(3, &[(0, 1, 1.0), (1, 0, 1.0)]).is_err());
        let p = CouplingParams {
            mode: CouplingMode::Vdw,
            c6: Some(1.0),
            u_nn_mhz: Some(1.0),
            u_z_mhz: None,
            u_w_mhz: None,
        };
        assert!(p.resolve(5.0).is_err());
    }

    #[test]
    fn csv_dump() {
        let g = build_lattice(LatticeKind::Chain, &[3], Boundary::Open, 5.0, 1.0).unwrap();
        let c = build_couplings(&g, CouplingSpec::isotropic_nn(1.5)).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,j,U_radpus\n0,1,"));
        assert_eq!(text.lines().count(), 3);
    }
}
