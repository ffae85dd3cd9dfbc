use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagate::QuantumState;

/// Independent per-site misreadings applied after Born sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionErrors {
    /// Probability that a ground-state atom is read as excited (`0 -> 1`).
    pub epsilon: f64,
    /// Probability that an excited atom is read as ground state (`1 -> 0`).
    pub epsilon_prime: f64,
}

impl DetectionErrors {
    pub fn new(epsilon: f64, epsilon_prime: f64) -> Result<Self> {
        for (name, v) in [("epsilon", epsilon), ("epsilon_prime", epsilon_prime)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1)")));
            }
        }
        Ok(DetectionErrors {
            epsilon,
            epsilon_prime,
        })
    }

    /// Expected measured density for a true density `n`.
    pub fn measured_density(&self, n: f64) -> f64 {
        n + self.epsilon * (1.0 - n) - self.epsilon_prime * n
    }
}

/// Where shots are drawn from.
#[derive(Clone, Copy, Debug)]
pub enum ShotSource<'a> {
    State(&'a QuantumState),
    /// A probability vector over the `2^N` basis, e.g. the trajectory
    /// average of an ensemble snapshot or the diagonal of a density matrix.
    Probabilities { n_sites: usize, probabilities: &'a [f64] },
    /// Uniform choice among classical configurations.
    Configurations { n_sites: usize, configurations: &'a [u64] },
}

impl ShotSource<'_> {
    fn describe(&self) -> &'static str {
        match self {
            ShotSource::State(_) => "state",
            ShotSource::Probabilities { .. } => "ensemble",
            ShotSource::Configurations { .. } => "classical configuration set",
        }
    }
}

/// Measured bitstrings; bit `i` is 1 when site `i` was read as excited.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotSet {
    pub n_sites: usize,
    pub shots: Vec<u64>,
    pub source: String,
    pub errors: DetectionErrors,
    pub seed: u64,
}

/// Draw `n_shots` outcomes and apply detection errors.
pub fn sample_shots(
    source: ShotSource<'_>,
    n_shots: usize,
    errors: DetectionErrors,
    seed: u64,
) -> Result<ShotSet> {
    DetectionErrors::new(errors.epsilon, errors.epsilon_prime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_sites, raw): (usize, Vec<u64>) = match source {
        ShotSource::State(state) => {
            let p = state.probabilities();
            (state.n_sites(), draw_born(&p, n_shots, &mut rng)?)
        }
        ShotSource::Probabilities {
            n_sites,
            probabilities,
        } => {
            if probabilities.len() != 1usize << n_sites {
                return Err(Error::DimensionMismatch {
                    expected: 1 << n_sites,
                    found: probabilities.len(),
                });
            }
            (n_sites, draw_born(probabilities, n_shots, &mut rng)?)
        }
        ShotSource::Configurations {
            n_sites,
            configurations,
        } => {
            if configurations.is_empty() {
                return Err(Error::invalid("configurations", "empty set"));
            }
            if n_sites == 0 || n_sites > 64 {
                return Err(Error::invalid("n_sites", "bitstring sources hold at most 64 sites"));
            }
            let shots = (0..n_shots)
                .map(|_| configurations[rng.gen_range(0..configurations.len())])
                .collect();
            (n_sites, shots)
        }
    };
    let shots = if errors.epsilon == 0.0 && errors.epsilon_prime == 0.0 {
        raw
    } else {
        raw.into_iter()
            .map(|mut bits| {
                for i in 0..n_sites {
                    let mask = 1u64 << i;
                    let flip = if bits & mask == 0 {
                        errors.epsilon
                    } else {
                        errors.epsilon_prime
                    };
                    if flip > 0.0 && rng.gen::<f64>() < flip {
                        bits ^= mask;
                    }
                }
                bits
            })
            .collect()
    };
    Ok(ShotSet {
        n_sites,
        shots,
        source: source.describe().to_string(),
        errors,
        seed,
    })
}

fn draw_born(probabilities: &[f64], n_shots: usize, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let total: f64 = probabilities.iter().sum();
    if probabilities.iter().any(|p| !(p.is_finite() && *p >= -1e-12)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "source",
            format!("probabilities sum to {total}, not 1"),
        ));
    }
    let dist = WeightedIndex::new(probabilities.iter().map(|p| p.max(0.0)))
        .map_err(|e| Error::invalid("source", e.to_string()))?;
    Ok((0..n_shots).map(|_| dist.sample(rng) as u64).collect())
}

impl ShotSet {
    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn mean_density(&self) -> f64 {
        let ones: u64 = self.shots.iter().map(|s| u64::from(s.count_ones())).sum();
        ones as f64 / (self.n_sites * self.shots.len()) as f64
    }

    /// One line per shot, site 0 first, characters `0`/`1`.
    pub fn write_text<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let mut line = String::with_capacity(self.n_sites + 1);
        for &s in &self.shots {
            line.clear();
            for i in 0..self.n_sites {
                line.push(if s >> i & 1 == 1 { '1' } else { '0' });
            }
            line.push('\n');
            writer.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Parse the text format; metadata other than the outcomes is reset.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut n_sites = None;
        let mut shots = Vec::new();
        for (row, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<shots>", e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let n = *n_sites.get_or_insert(line.len());
            if line.len() != n || n > 64 {
                return Err(Error::invalid("shots", format!("line {} has the wrong length", row + 1)));
            }
            let mut bits = 0u64;
            for (i, c) in line.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => bits |= 1 << i,
                    _ => {
                        return Err(Error::invalid(
                            "shots",
                            format!("line {}: unexpected character {c:?}", row + 1),
                        ))
                    }
                }
            }
            shots.push(bits);
        }
        Ok(ShotSet {
            n_sites: n_sites.ok_or_else(|| Error::invalid("shots", "no outcomes"))?,
            shots,
            source: "file".into(),
            errors: DetectionErrors::default(),
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_state_without_errors() {
        let s = QuantumState::all_down(5).unwrap();
        let shots = sample_shots(ShotSource::State(&s), 100, DetectionErrors::default(), 1).unwrap();
        assert!(shots.shots.iter().all(|&b| b == 0));
    }

    #[test]
    fn false_positive_rate() {
        let s = QuantumState::all_down(10).unwrap();
        let e = DetectionErrors::new(0.1, 0.0).unwrap();
        let shots = sample_shots(ShotSource::State(&s), 20_000, e, 7).unwrap();
        let n = shots.mean_density();
        let se = (0.1f64 * 0.9 / 200_000.0).sqrt();
        assert!((n - 0.1).abs() < 4.0 * se, "{n}");
    }

    #[test]
    fn text_round_trip() {
        let set = ShotSet {
            n_sites: 4,
            shots: vec![0b0001, 0b1010],
            source: "test".into(),
            errors: DetectionErrors::default(),
            seed: 0,
        };
        let mut buf = Vec::new();
        set.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1000\n0101\n");
        let back = ShotSet::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.shots, set.shots);
        assert!(ShotSet::read_text("10\n101\n".as_bytes()).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = vec![0.5; 4];
        assert!(sample_shots(
            ShotSource::Probabilities {
                n_sites: 2,
                probabilities: &p
            },
            10,
            DetectionErrors::default(),
            0
        )
        .is_err());
        assert!(DetectionErrors::new(1.0, 0.0).is_err());
    }
}
