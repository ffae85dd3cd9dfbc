use std::io::Write;

use serde::Serialize;

use super::moments::Moments;
use super::shots::ShotSet;
use crate::error::{Error, Result};
use crate::lattice::{displacement_classes, DisplacementClass, LatticeGeometry, Symmetrization};

/// Largest number of jackknife blocks used for sampled sources.
const MAX_BLOCKS: usize = 64;

/// Input of a correlation analysis.
#[derive(Clone, Copy, Debug)]
pub enum CorrelationSource<'a> {
    /// Exact expectation values; no statistical error.
    Exact(&'a Moments),
    /// Equal-weight samples of expectation values, e.g. one per quantum
    /// trajectory. Errors come from a blocked jackknife over samples.
    Samples(&'a [Moments]),
    /// Measured bitstrings. Errors come from a blocked jackknife over shots.
    Shots(&'a ShotSet),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationEntry {
    pub canonical: (i64, i64),
    pub members: Vec<(i64, i64)>,
    pub shell: usize,
    /// Ordered pair count `N_{k,l}`.
    pub pairs: usize,
    pub g2: f64,
    /// Standard error; zero for exact sources, NaN when fewer than two
    /// samples are available.
    pub stderr: f64,
}

/// Class-averaged connected correlator `g2(k, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    pub symmetrization: Symmetrization,
    pub max_shell: usize,
    pub entries: Vec<CorrelationEntry>,
    /// Leave-one-block-out values, `replicas[b][entry]`; empty for exact
    /// sources. Derived statistics propagate their errors through these.
    replicas: Vec<Vec<f64>>,
}

/// Connected correlator of `source` on every displacement class up to
/// `max_shell`.
pub fn g2_connected(
    source: CorrelationSource<'_>,
    geometry: &LatticeGeometry,
    max_shell: usize,
    symmetrization: Symmetrization,
) -> Result<CorrelationMap> {
    let classes = displacement_classes(geometry, max_shell, symmetrization)?;
    CorrelationMap::compute(source, &classes, symmetrization)
}

fn class_values(m: &Moments, classes: &[DisplacementClass]) -> Vec<f64> {
    classes
        .iter()
        .map(|c| {
            let s: f64 = c.pairs.iter().map(|&(i, j)| m.connected(i, j)).sum();
            s / c.pairs.len() as f64
        })
        .collect()
}

/// Sums of per-sample moments over contiguous blocks, with block sizes.
fn block_sums<F>(count: usize, n_sites: usize, mut sum_range: F) -> Result<Vec<(Moments, usize)>>
where
    F: FnMut(std::ops::Range<usize>) -> Result<Moments>,
{
    let n_blocks = count.min(MAX_BLOCKS);
    let mut out = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let lo = b * count / n_blocks;
        let hi = (b + 1) * count / n_blocks;
        let sum = sum_range(lo..hi)?;
        if sum.n_sites() != n_sites {
            return Err(Error::DimensionMismatch {
                expected: n_sites,
                found: sum.n_sites(),
            });
        }
        out.push((sum, hi - lo));
    }
    Ok(out)
}

impl CorrelationMap {
    /// Evaluate `source` on precomputed classes.
    pub fn compute(
        source: CorrelationSource<'_>,
        classes: &[DisplacementClass],
        symmetrization: Symmetrization,
    ) -> Result<Self> {
        for c in classes {
            if c.pairs.is_empty() {
                return Err(Error::EmptyClass {
                    k: c.canonical.0,
                    l: c.canonical.1,
                });
            }
        }
        let (n_sites, blocks) = match source {
            CorrelationSource::Exact(m) => {
                check_sites(m.n_sites(), classes)?;
                let values = class_values(m, classes);
                return Ok(Self::assemble(classes, symmetrization, values, None, Vec::new()));
            }
            CorrelationSource::Samples(samples) => {
                let first = samples
                    .first()
                    .ok_or_else(|| Error::invalid("samples", "empty set"))?;
                let n = first.n_sites();
                let blocks = block_sums(samples.len(), n, |r| {
                    let mut acc = Moments::zeros(n);
                    for s in &samples[r] {
                        acc.accumulate(s, 1.0)?;
                    }
                    Ok(acc)
                })?;
                (n, blocks)
            }
            CorrelationSource::Shots(set) => {
                if set.is_empty() {
                    return Err(Error::invalid("shots", "empty set"));
                }
                let blocks = block_sums(set.len(), set.n_sites, |r| {
                    Moments::sum_of_configurations(set.n_sites, &set.shots[r])
                })?;
                (set.n_sites, blocks)
            }
        };
        check_sites(n_sites, classes)?;

        let total_count: usize = blocks.iter().map(|b| b.1).sum();
        let mut total = Moments::zeros(n_sites);
        for (m, _) in &blocks {
            total.accumulate(m, 1.0)?;
        }
        let mut mean = total.clone();
        mean.scale(1.0 / total_count as f64);
        let values = class_values(&mean, classes);

        if blocks.len() < 2 {
            let stderr = vec![f64::NAN; values.len()];
            return Ok(Self::assemble(classes, symmetrization, values, Some(stderr), Vec::new()));
        }
        let mut replicas = Vec::with_capacity(blocks.len());
        for (m, count) in &blocks {
            let mut loo = total.clone();
            loo.accumulate(m, -1.0)?;
            loo.scale(1.0 / (total_count - count) as f64);
            replicas.push(class_values(&loo, classes));
        }
        let stderr = (0..values.len())
            .map(|e| jackknife_error(replicas.iter().map(|r| r[e])))
            .collect();
        Ok(Self::assemble(classes, symmetrization, values, Some(stderr), replicas))
    }

    fn assemble(
        classes: &[DisplacementClass],
        symmetrization: Symmetrization,
        values: Vec<f64>,
        stderr: Option<Vec<f64>>,
        replicas: Vec<Vec<f64>>,
    ) -> Self {
        let stderr = stderr.unwrap_or_else(|| vec![0.0; values.len()]);
        let entries = classes
            .iter()
            .zip(values.into_iter().zip(stderr))
            .map(|(c, (g2, stderr))| CorrelationEntry {
                canonical: c.canonical,
                members: c.members.clone(),
                shell: c.shell,
                pairs: c.pair_count(),
                g2,
                stderr,
            })
            .collect();
        CorrelationMap {
            symmetrization,
            max_shell: classes.iter().map(|c| c.shell).max().unwrap_or(0),
            entries,
            replicas,
        }
    }

    /// Map with prescribed class values, e.g. an idealised pattern.
    pub fn from_values<F>(
        classes: &[DisplacementClass],
        symmetrization: Symmetrization,
        value: F,
    ) -> Self
    where
        F: Fn(&DisplacementClass) -> f64,
    {
        let values = classes.iter().map(value).collect();
        Self::assemble(classes, symmetrization, values, None, Vec::new())
    }

    /// Entry whose members include the displacement `(k, l)`.
    pub fn get(&self, k: i64, l: i64) -> Option<&CorrelationEntry> {
        self.entries
            .iter()
            .find(|e| e.members.contains(&(k, l)) || e.members.contains(&(-k, -l)))
    }

    /// Pair-weighted average of `g2` over shell `m`.
    pub fn shell_average(&self, m: usize) -> Option<f64> {
        self.weighted_shell(m, |e, _| e.g2)
    }

    /// Jackknife standard error of [`Self::shell_average`]; zero for exact
    /// maps.
    pub fn shell_average_stderr(&self, m: usize) -> Option<f64> {
        self.weighted_shell(m, |_, _| 0.0)?;
        if self.replicas.is_empty() {
            return Some(if self.entries.iter().any(|e| e.stderr.is_nan()) {
                f64::NAN
            } else {
                0.0
            });
        }
        let reps = (0..self.replicas.len())
            .map(|b| self.weighted_shell(m, |_, i| self.replicas[b][i]).unwrap_or(0.0));
        Some(jackknife_error(reps))
    }

    fn weighted_shell<F>(&self, m: usize, value: F) -> Option<f64>
    where
        F: Fn(&CorrelationEntry, usize) -> f64,
    {
        let (mut num, mut den) = (0.0, 0usize);
        for (i, e) in self.entries.iter().enumerate().filter(|(_, e)| e.shell == m) {
            num += e.pairs as f64 * value(e, i);
            den += e.pairs;
        }
        (den > 0).then(|| num / den as f64)
    }

    pub fn shells(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().map(|e| e.shell).collect();
        s.dedup();
        s
    }

    pub(crate) fn replicas(&self) -> &[Vec<f64>] {
        &self.replicas
    }

    /// CSV with columns `k,l,m,g2,stderr,pairs`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "l", "m", "g2", "stderr", "pairs"])?;
        for e in &self.entries {
            w.write_record([
                e.canonical.0.to_string(),
                e.canonical.1.to_string(),
                e.shell.to_string(),
                e.g2.to_string(),
                e.stderr.to_string(),
                e.pairs.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_sites(n_sites: usize, classes: &[DisplacementClass]) -> Result<()> {
    let needed = classes
        .iter()
        .flat_map(|c| c.pairs.iter().map(|&(i, j)| i.max(j) + 1))
        .max()
        .unwrap_or(0);
    if needed > n_sites {
        return Err(Error::DimensionMismatch {
            expected: needed,
            found: n_sites,
        });
    }
    Ok(())
}

pub(crate) fn jackknife_error<I: Iterator<Item = f64>>(replicas: I) -> f64 {
    let v: Vec<f64> = replicas.collect();
    let b = v.len() as f64;
    if v.len() < 2 {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / b;
    ((b - 1.0) / b * v.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};
    use crate::measure::{sample_shots, DetectionErrors, ShotSource};

    fn square(l: usize) -> LatticeGeometry {
        build_lattice(LatticeKind::Square, &[l, l], Boundary::Open, 1.0, 1.0).unwrap()
    }

    fn neel(g: &LatticeGeometry, parity: i64) -> u64 {
        g.sites()
            .iter()
            .filter(|s| (s.k + s.l).rem_euclid(2) == parity)
            .fold(0, |acc, s| acc | 1 << s.index)
    }

    #[test]
    fn neel_superposition_gives_quarter_values() {
        let g = square(4);
        let m = Moments::from_configurations(16, &[neel(&g, 0), neel(&g, 1)]).unwrap();
        let map = g2_connected(CorrelationSource::Exact(&m), &g, 6, Symmetrization::Quadrants).unwrap();
        for e in &map.entries {
            let want = if e.shell % 2 == 0 { 0.25 } else { -0.25 };
            assert_eq!(e.g2, want, "{:?}", e.canonical);
        }
    }

    #[test]
    fn shot_estimator_converges() {
        let g = square(2);
        let m = Moments::from_configurations(4, &[neel(&g, 0), neel(&g, 1)]).unwrap();
        let exact = g2_connected(CorrelationSource::Exact(&m), &g, 2, Symmetrization::Quadrants).unwrap();
        let configs = [neel(&g, 0), neel(&g, 1)];
        let shots = sample_shots(
            ShotSource::Configurations {
                n_sites: 4,
                configurations: &configs,
            },
            20_000,
            DetectionErrors::default(),
            3,
        )
        .unwrap();
        let est = g2_connected(CorrelationSource::Shots(&shots), &g, 2, Symmetrization::Quadrants).unwrap();
        for (a, b) in exact.entries.iter().zip(&est.entries) {
            assert!(b.stderr > 0.0);
            assert!((a.g2 - b.g2).abs() < 4.0 * b.stderr + 1e-12);
        }
        assert!(map_has_shell(&est, 2));
    }

    fn map_has_shell(map: &CorrelationMap, m: usize) -> bool {
        map.shell_average(m).is_some()
    }

    #[test]
    fn quadrant_merge_commutes_with_averaging() {
        let g = square(3);
        let configs = [0b000010011u64, 0b100100001, 0b011000100];
        let m = Moments::from_configurations(9, &configs).unwrap();
        let merged = g2_connected(CorrelationSource::Exact(&m), &g, 4, Symmetrization::Quadrants).unwrap();
        let raw = g2_connected(CorrelationSource::Exact(&m), &g, 4, Symmetrization::None).unwrap();
        for e in &merged.entries {
            let parts: Vec<&CorrelationEntry> = raw
                .entries
                .iter()
                .filter(|r| r.members.iter().all(|&(k, l)| (k.abs(), l.abs()) == e.canonical))
                .collect();
            let num: f64 = parts.iter().map(|r| r.g2 * r.pairs as f64).sum();
            let den: usize = parts.iter().map(|r| r.pairs).sum();
            assert_eq!(den, e.pairs);
            assert!((num / den as f64 - e.g2).abs() < 1e-15);
        }
    }
}
