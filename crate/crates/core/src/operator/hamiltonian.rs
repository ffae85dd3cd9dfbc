use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::CouplingMap;
use crate::error::{Error, Result};
use crate::schedule::Drive;

/// Largest system the bitstring-basis code accepts.
pub const MAX_SITES: usize = 24;

/// Rows per block; a block of output stays in the L1 cache.
const CHUNK: usize = 1024;

/// A linear map on the `2^N` amplitude space, applied matrix-free.
pub trait LinearGenerator: Sync {
    fn dim(&self) -> usize;

    /// `output = G input`. Both slices have length `dim()`.
    fn apply_into(&self, input: &[Complex64], output: &mut [Complex64]);

    fn is_hermitian(&self) -> bool;
}

/// Couplings plus the diagonal tables they induce on the bitstring basis.
/// Built once and shared by every drive value.
#[derive(Clone, Debug)]
pub struct RydbergModel {
    couplings: CouplingMap,
    /// `sum_{i<j} U_ij n_i n_j` for each basis state.
    interaction: Vec<f64>,
    /// Number of excited sites for each basis state.
    occupation: Vec<u8>,
}

impl RydbergModel {
    pub fn new(couplings: CouplingMap) -> Result<Self> {
        let n = couplings.n_sites();
        if n == 0 {
            return Err(Error::invalid("geometry", "no sites"));
        }
        if n > MAX_SITES {
            return Err(Error::TooLarge {
                sites: n,
                limit: MAX_SITES,
                method: "bitstring-basis evolution",
            });
        }
        let dim = 1usize << n;
        let mut interaction = vec![0.0; dim];
        for &(i, j, u) in couplings.entries() {
            let mask = (1usize << i) | (1usize << j);
            for (b, e) in interaction.iter_mut().enumerate() {
                if b & mask == mask {
                    *e += u;
                }
            }
        }
        let occupation = (0..dim).map(|b| b.count_ones() as u8).collect();
        Ok(RydbergModel {
            couplings,
            interaction,
            occupation,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.couplings.n_sites()
    }

    pub fn dim(&self) -> usize {
        self.interaction.len()
    }

    pub fn couplings(&self) -> &CouplingMap {
        &self.couplings
    }

    pub fn interaction_energies(&self) -> &[f64] {
        &self.interaction
    }

    pub fn occupation(&self, b: usize) -> u32 {
        u32::from(self.occupation[b])
    }

    /// Hamiltonian at fixed drive values.
    pub fn at(&self, drive: Drive) -> HamiltonianView<'_> {
        HamiltonianView {
            model: self,
            omega: drive.omega,
            delta: drive.delta,
            damping: 0.0,
        }
    }
}

/// `H(Omega, delta)` on a model, optionally with an anti-Hermitian diagonal
/// part `-i damping sum_i n_i` (the no-jump generator of local dephasing).
#[derive(Clone, Copy, Debug)]
pub struct HamiltonianView<'a> {
    model: &'a RydbergModel,
    pub omega: f64,
    pub delta: f64,
    pub damping: f64,
}

impl<'a> HamiltonianView<'a> {
    pub fn model(&self) -> &'a RydbergModel {
        self.model
    }

    pub fn with_damping(self, damping: f64) -> Self {
        HamiltonianView { damping, ..self }
    }

    /// Real part of the diagonal element for basis state `b`.
    #[inline]
    pub fn diagonal(&self, b: usize) -> f64 {
        self.model.interaction[b] - self.delta * f64::from(self.model.occupation[b])
    }

    /// `H psi` as a new vector.
    pub fn apply(&self, state: &[Complex64]) -> Result<Vec<Complex64>> {
        if state.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: state.len(),
            });
        }
        let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
        self.apply_into(state, &mut out);
        Ok(out)
    }

    /// `<psi|H|psi>`.
    pub fn expectation(&self, state: &[Complex64]) -> Result<Complex64> {
        let h = self.apply(state)?;
        Ok(state.iter().zip(&h).map(|(a, b)| a.conj() * b).sum())
    }

    /// Explicit matrix, for small systems and tests.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let dim = self.dim();
        let n = self.model.n_sites();
        let mut m = DMatrix::zeros(dim, dim);
        for b in 0..dim {
            let occ = f64::from(self.model.occupation[b]);
            m[(b, b)] = Complex64::new(self.diagonal(b), -self.damping * occ);
            for i in 0..n {
                m[(b ^ (1 << i), b)] += Complex64::new(0.5 * self.omega, 0.0);
            }
        }
        m
    }

    /// Explicit real symmetric matrix (damping ignored).
    pub fn to_dense_real(&self) -> DMatrix<f64> {
        self.to_dense().map(|z| z.re)
    }

    /// Rows `base..base + out.len()` of `H x`. `base` and the block length
    /// are multiples of a power of two no smaller than `out.len()`, so
    /// each bit flip either stays inside the block or maps it onto another
    /// contiguous block of `x`; both cases are plain slice operations.
    fn apply_block(&self, x: &[Complex64], out: &mut [Complex64], base: usize, n: usize, half_omega: f64) {
        let len = out.len();
        let inter = &self.model.interaction[base..base + len];
        let occ = &self.model.occupation[base..base + len];
        let xs = &x[base..base + len];
        for (((o, &xv), &e), &k) in out.iter_mut().zip(xs).zip(inter).zip(occ) {
            let k = f64::from(k);
            *o = xv * Complex64::new(e - self.delta * k, -self.damping * k);
        }
        if half_omega == 0.0 {
            return;
        }
        // Low bits flip within windows of 16 amplitudes; gather them per row.
        let low = n.min(4).min(len.trailing_zeros() as usize);
        if low > 0 {
            let window = &x[base..base + len];
            for (b, o) in out.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..low {
                    acc += window[b ^ (1 << i)];
                }
                *o += acc * half_omega;
            }
        }
        for i in low..n {
            let mask = 1usize << i;
            if mask >= len {
                // The whole block maps onto x[base ^ mask ..].
                let src = &x[(base ^ mask)..(base ^ mask) + len];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += v * half_omega;
                }
            } else {
                for (lo, chunk) in out.chunks_mut(2 * mask).enumerate() {
                    let start = base + lo * 2 * mask;
                    let (first, second) = chunk.split_at_mut(mask);
                    let upper = &x[start + mask..start + 2 * mask];
                    let lower = &x[start..start + mask];
                    for (o, v) in first.iter_mut().zip(upper) {
                        *o += v * half_omega;
                    }
                    for (o, v) in second.iter_mut().zip(lower) {
                        *o += v * half_omega;
                    }
                }
            }
        }
    }
}

impl LinearGenerator for HamiltonianView<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        let n = self.model.n_sites();
        let half_omega = 0.5 * self.omega;
        if y.len() <= CHUNK || rayon::current_num_threads() == 1 {
            for (c, chunk) in y.chunks_mut(CHUNK).enumerate() {
                self.apply_block(x, chunk, c * CHUNK, n, half_omega);
            }
            return;
        }
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            self.apply_block(x, chunk, c * CHUNK, n, half_omega);
        });
    }

    fn is_hermitian(&self) -> bool {
        self.damping == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};
    use crate::operator::{build_couplings, CouplingSpec};

    fn chain_model(n: usize, u: f64) -> RydbergModel {
        let g = build_lattice(LatticeKind::Chain, &[n], Boundary::Open, 1.0, 1.0).unwrap();
        RydbergModel::new(build_couplings(&g, CouplingSpec::isotropic_nn(u)).unwrap()).unwrap()
    }

    #[test]
    fn all_down_maps_to_single_flips() {
        let m = chain_model(4, 3.0);
        let h = m.at(Drive {
            omega: 2.0,
            delta: 0.7,
        });
        let mut psi = vec![Complex64::new(0.0, 0.0); 16];
        psi[0] = Complex64::new(1.0, 0.0);
        let out = h.apply(&psi).unwrap();
        for (b, v) in out.iter().enumerate() {
            let expected = if b.count_ones() == 1 { 1.0 } else { 0.0 };
            assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn doubly_excited_pair_diagonal() {
        let m = chain_model(2, 5.0);
        let h = m.at(Drive {
            omega: 0.0,
            delta: 1.5,
        });
        assert_eq!(h.diagonal(0b11), 5.0 - 3.0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = chain_model(3, 1.0);
        let h = m.at(Drive {
            omega: 1.0,
            delta: 0.0,
        });
        assert!(matches!(
            h.apply(&[Complex64::new(1.0, 0.0); 4]),
            Err(Error::DimensionMismatch { expected: 8, found: 4 })
        ));
    }

    #[test]
    fn too_many_sites() {
        let c = CouplingMap::from_entries(MAX_SITES + 1, &[]).unwrap();
        assert!(matches!(RydbergModel::new(c), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn damping_only_touches_the_imaginary_diagonal() {
        let m = chain_model(2, 1.0);
        let h = m
            .at(Drive {
                omega: 0.0,
                delta: 0.0,
            })
            .with_damping(0.5);
        assert!(!h.is_hermitian());
        let d = h.to_dense();
        assert_eq!(d[(3, 3)], Complex64::new(1.0, -1.0));
    }
}
