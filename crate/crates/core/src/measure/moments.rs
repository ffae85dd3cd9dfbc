use crate::error::{Error, Result};
use crate::propagate::QuantumState;

/// First and second moments of the occupation numbers: `<n_i>` and
/// `<n_i n_j>` (with `<n_i n_i> = <n_i>` on the diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    n_sites: usize,
    density: Vec<f64>,
    pair: Vec<f64>,
}

impl Moments {
    pub fn zeros(n_sites: usize) -> Self {
        Moments {
            n_sites,
            density: vec![0.0; n_sites],
            pair: vec![0.0; n_sites * n_sites],
        }
    }

    /// Moments of a distribution over bitstrings, given as a probability
    /// vector in basis-index order.
    pub fn from_probabilities(n_sites: usize, probabilities: &[f64]) -> Result<Self> {
        if n_sites == 0 || n_sites >= usize::BITS as usize {
            return Err(Error::invalid("n_sites", "out of range"));
        }
        if probabilities.len() != 1usize << n_sites {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_sites,
                found: probabilities.len(),
            });
        }
        let mut m = Moments::zeros(n_sites);
        let mut ones = Vec::with_capacity(n_sites);
        for (b, &p) in probabilities.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            m.add_bits(b as u64, p, &mut ones);
        }
        m.symmetrize();
        Ok(m)
    }

    pub fn from_state(state: &QuantumState) -> Self {
        Self::from_probabilities(state.n_sites(), &state.probabilities())
            .expect("state dimension is consistent")
    }

    /// Moments of the uniform mixture of the given configurations
    /// (bit `i` = site `i`).
    pub fn from_configurations(n_sites: usize, configurations: &[u64]) -> Result<Self> {
        if configurations.is_empty() {
            return Err(Error::invalid("configurations", "empty set"));
        }
        let mut m = Self::sum_of_configurations(n_sites, configurations)?;
        m.scale(1.0 / configurations.len() as f64);
        Ok(m)
    }

    /// Unnormalised sum over configurations.
    pub(crate) fn sum_of_configurations(n_sites: usize, configurations: &[u64]) -> Result<Self> {
        if n_sites == 0 || n_sites > 64 {
            return Err(Error::invalid("n_sites", "bitstring sources hold at most 64 sites"));
        }
        let mut m = Moments::zeros(n_sites);
        let mut ones = Vec::with_capacity(n_sites);
        for &c in configurations {
            if n_sites < 64 && c >> n_sites != 0 {
                return Err(Error::invalid("configurations", "bit set beyond the last site"));
            }
            m.add_bits(c, 1.0, &mut ones);
        }
        m.symmetrize();
        Ok(m)
    }

    /// Equal-weight average of several moment sets.
    pub fn mean(samples: &[Moments]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("samples", "empty set"))?;
        let mut acc = Moments::zeros(first.n_sites);
        for s in samples {
            acc.accumulate(s, 1.0)?;
        }
        acc.scale(1.0 / samples.len() as f64);
        Ok(acc)
    }

    fn add_bits(&mut self, bits: u64, weight: f64, ones: &mut Vec<usize>) {
        ones.clear();
        let mut rest = bits;
        while rest != 0 {
            ones.push(rest.trailing_zeros() as usize);
            rest &= rest - 1;
        }
        let n = self.n_sites;
        for (a, &i) in ones.iter().enumerate() {
            self.density[i] += weight;
            for &j in &ones[a..] {
                self.pair[i * n + j] += weight;
            }
        }
    }

    /// Copy the upper triangle filled by `add_bits` to the lower one.
    fn symmetrize(&mut self) {
        let n = self.n_sites;
        for i in 0..n {
            for j in 0..i {
                self.pair[i * n + j] = self.pair[j * n + i];
            }
        }
    }

    pub(crate) fn accumulate(&mut self, other: &Moments, weight: f64) -> Result<()> {
        if other.n_sites != self.n_sites {
            return Err(Error::DimensionMismatch {
                expected: self.n_sites,
                found: other.n_sites,
            });
        }
        self.density
            .iter_mut()
            .zip(&other.density)
            .for_each(|(a, b)| *a += weight * b);
        self.pair
            .iter_mut()
            .zip(&other.pair)
            .for_each(|(a, b)| *a += weight * b);
        Ok(())
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.density.iter_mut().for_each(|a| *a *= factor);
        self.pair.iter_mut().for_each(|a| *a *= factor);
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mean_density(&self) -> f64 {
        self.density.iter().sum::<f64>() / self.n_sites as f64
    }

    /// `<n_i n_j>`.
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair[i * self.n_sites + j]
    }

    /// `<n_i n_j> - <n_i><n_j>`.
    pub fn connected(&self, i: usize, j: usize) -> f64 {
        self.pair(i, j) - self.density[i] * self.density[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_configuration_mixture() {
        let m = Moments::from_configurations(4, &[0b0101, 0b1010]).unwrap();
        assert_eq!(m.density(), &[0.5; 4]);
        assert_eq!(m.connected(0, 1), -0.25);
        assert_eq!(m.connected(0, 2), 0.25);
        assert_eq!(m.pair(3, 3), 0.5);
    }

    #[test]
    fn probabilities_agree_with_configurations() {
        let mut p = vec![0.0; 16];
        p[0b0011] = 0.25;
        p[0b1000] = 0.75;
        let a = Moments::from_probabilities(4, &p).unwrap();
        let mut b = Moments::sum_of_configurations(4, &[0b0011]).unwrap();
        b.scale(0.25);
        let mut c = Moments::sum_of_configurations(4, &[0b1000]).unwrap();
        c.scale(0.75);
        b.accumulate(&c, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(Moments::from_probabilities(3, &p).is_err());
    }
}
