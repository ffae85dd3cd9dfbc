use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::MAX_SITES;

/// Normalised amplitude vector over the `2^N` bitstring basis.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    n_sites: usize,
    amplitudes: Vec<Complex64>,
    /// Time in us at which the state is defined.
    pub time: f64,
}

const NORM_TOL: f64 = 1e-9;

impl QuantumState {
    /// Every atom in the ground state.
    pub fn all_down(n_sites: usize) -> Result<Self> {
        Self::basis(n_sites, 0)
    }

    pub fn basis(n_sites: usize, bits: usize) -> Result<Self> {
        check_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if bits >= dim {
            return Err(Error::invalid("bits", format!("{bits} out of range for {n_sites} sites")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[bits] = Complex64::new(1.0, 0.0);
        Ok(QuantumState {
            n_sites,
            amplitudes,
            time: 0.0,
        })
    }

    /// Wrap an amplitude vector; it must already be normalised.
    pub fn from_amplitudes(n_sites: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        check_sites(n_sites)?;
        if amplitudes.len() != 1usize << n_sites {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_sites,
                found: amplitudes.len(),
            });
        }
        let state = QuantumState {
            n_sites,
            amplitudes,
            time: 0.0,
        };
        let norm = state.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::invalid("state", format!("norm {norm} is not 1")));
        }
        Ok(state)
    }

    /// Normalise an arbitrary non-zero vector.
    pub fn normalized(n_sites: usize, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid("state", "cannot normalise a zero vector"));
        }
        amplitudes.iter_mut().for_each(|a| *a /= norm);
        Self::from_amplitudes(n_sites, amplitudes)
    }


    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut Vec<Complex64> {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Born probabilities `|psi_b|^2`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<n_i>` for every site.
    pub fn site_densities(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites];
        for (b, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            let mut bits = b;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                out[i] += p;
                bits &= bits - 1;
            }
        }
        out
    }

    /// `<phi|psi>`.
    pub fn overlap(&self, other: &QuantumState) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|| psi - phi ||`.
    pub fn distance(&self, other: &QuantumState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Raw dump: little-endian `f64` pairs `(re, im)` in basis-index order.
    pub fn write_amplitudes<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(16 * self.amplitudes.len());
        for a in &self.amplitudes {
            buf.extend_from_slice(&a.re.to_le_bytes());
            buf.extend_from_slice(&a.im.to_le_bytes());
        }
        writer.write_all(&buf)
    }

    pub fn read_amplitudes<R: Read>(n_sites: usize, mut reader: R) -> Result<Self> {
        check_sites(n_sites)?;
        let dim = 1usize << n_sites;
        let mut buf = vec![0u8; 16 * dim];
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io("<amplitude dump>", e))?;
        let amplitudes = buf
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        Self::from_amplitudes(n_sites, amplitudes)
    }
}

fn check_sites(n_sites: usize) -> Result<()> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(Error::TooLarge {
            sites: n_sites,
            limit: MAX_SITES,
            method: "state vector",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densities_of_basis_state() {
        let s = QuantumState::basis(4, 0b1010).unwrap();
        assert_eq!(s.site_densities(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!(QuantumState::basis(2, 4).is_err());
    }

    #[test]
    fn rejects_unnormalised() {
        let v = vec![Complex64::new(1.0, 0.0); 4];
        assert!(QuantumState::from_amplitudes(2, v.clone()).is_err());
        let s = QuantumState::normalized(2, v).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn binary_dump_round_trip() {
        let amps = (0..8)
            .map(|b| Complex64::new(b as f64, -(b as f64) * 0.5))
            .collect();
        let s = QuantumState::normalized(3, amps).unwrap();
        let mut buf = Vec::new();
        s.write_amplitudes(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * 16);
        assert_eq!(&buf[16..24], &s.amplitudes()[1].re.to_le_bytes());
        let back = QuantumState::read_amplitudes(3, buf.as_slice()).unwrap();
        assert_eq!(back.amplitudes(), s.amplitudes());
    }
}
