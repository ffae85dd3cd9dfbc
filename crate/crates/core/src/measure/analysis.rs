use std::io::Write;

use serde::Serialize;

use super::correlation::{jackknife_error, CorrelationMap};
use super::shots::ShotSet;
use crate::error::{Error, Result};
use crate::lattice::Partition;

/// Néel structure factor with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NeelFactor {
    pub value: f64,
    pub stderr: f64,
}

/// `S = 4 * sum_d (-1)^m g2(d)` over displacement vectors `d` with
/// `1 <= m <= max_shell`. Each class contributes once per distinct member
/// vector; the `d = 0` term is left out so that product states give zero.
pub fn neel_structure_factor(map: &CorrelationMap, max_shell: usize) -> Result<NeelFactor> {
    if max_shell == 0 {
        return Err(Error::invalid("max_shell", "must be at least 1"));
    }
    for m in 1..=max_shell {
        if !map.entries.iter().any(|e| e.shell == m) {
            return Err(Error::MissingShell(m));
        }
    }
    let weights: Vec<f64> = map
        .entries
        .iter()
        .map(|e| {
            if e.shell == 0 || e.shell > max_shell {
                0.0
            } else {
                let sign = if e.shell % 2 == 0 { 1.0 } else { -1.0 };
                4.0 * sign * e.members.len() as f64
            }
        })
        .collect();
    let combine = |values: &mut dyn Iterator<Item = f64>| -> f64 {
        values.zip(&weights).map(|(v, w)| v * w).sum()
    };
    let value = combine(&mut map.entries.iter().map(|e| e.g2));
    let stderr = if map.replicas().is_empty() {
        if map.entries.iter().any(|e| e.stderr.is_nan()) {
            f64::NAN
        } else {
            0.0
        }
    } else {
        jackknife_error(
            map.replicas()
                .iter()
                .map(|r| combine(&mut r.iter().copied())),
        )
    };
    Ok(NeelFactor { value, stderr })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationLength {
    /// `xi` in lattice sites.
    pub xi: f64,
    pub stderr: f64,
    pub shells_used: Vec<usize>,
}

/// Fit `|g2_m| ~ exp(-m / xi)` to the pair-weighted shell averages.
///
/// Shells whose average does not carry the sign `(-1)^m`, or whose
/// magnitude is below 1e-14, are skipped.
pub fn fit_correlation_length(map: &CorrelationMap) -> Result<CorrelationLength> {
    let mut pts = Vec::new();
    for m in map.shells() {
        if m == 0 {
            continue;
        }
        let Some(avg) = map.shell_average(m) else {
            continue;
        };
        let staggered = if m % 2 == 0 { avg } else { -avg };
        if staggered > 1e-14 {
            pts.push((m, staggered.ln()));
        }
    }
    if pts.is_empty() {
        return Err(Error::NoStaggeredSignal);
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientShells {
            needed: 3,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::NoStaggeredSignal);
    }
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0 as f64).powi(2))
        .sum();
    let slope_se = (rss / (n - 2.0) / sxx).sqrt();
    Ok(CorrelationLength {
        xi: -1.0 / slope,
        stderr: slope_se / (slope * slope),
        shells_used: pts.iter().map(|p| p.0).collect(),
    })
}

/// Joint distribution of the number of excitations on the two Néel
/// sublattices.
#[derive(Clone, Debug, PartialEq)]
pub struct SublatticeHistogram {
    pub size_a: usize,
    pub size_b: usize,
    /// Row-major over `(n_a, n_b)`.
    pub probabilities: Vec<f64>,
}

impl SublatticeHistogram {
    fn zeros(size_a: usize, size_b: usize) -> Self {
        SublatticeHistogram {
            size_a,
            size_b,
            probabilities: vec![0.0; (size_a + 1) * (size_b + 1)],
        }
    }

    pub fn get(&self, n_a: usize, n_b: usize) -> f64 {
        self.probabilities[n_a * (self.size_b + 1) + n_b]
    }

    fn add(&mut self, n_a: usize, n_b: usize, p: f64) {
        self.probabilities[n_a * (self.size_b + 1) + n_b] += p;
    }

    /// Total-variation distance to another histogram of the same shape.
    pub fn total_variation(&self, other: &SublatticeHistogram) -> Result<f64> {
        if (self.size_a, self.size_b) != (other.size_a, other.size_b) {
            return Err(Error::invalid("histogram", "shapes differ"));
        }
        Ok(0.5
            * self
                .probabilities
                .iter()
                .zip(&other.probabilities)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    /// CSV with columns `n_A,n_B,probability`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n_A", "n_B", "probability"])?;
        for a in 0..=self.size_a {
            for b in 0..=self.size_b {
                w.write_record([a.to_string(), b.to_string(), self.get(a, b).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn masks(partition: &Partition, n_sites: usize) -> Result<(u64, u64)> {
    if n_sites > 64 {
        return Err(Error::invalid("partition", "bitstring sources hold at most 64 sites"));
    }
    let (mut a, mut b) = (0u64, 0u64);
    let tagged = partition.a.iter().map(|&i| (i, true)).chain(partition.b.iter().map(|&i| (i, false)));
    for (i, in_a) in tagged {
        if i >= n_sites {
            return Err(Error::invalid("partition", format!("site {i} out of range")));
        }
        let bit = 1u64 << i;
        if (a | b) & bit != 0 {
            return Err(Error::invalid("partition", format!("site {i} listed twice")));
        }
        if in_a {
            a |= bit;
        } else {
            b |= bit;
        }
    }
    let all = if n_sites == 64 { u64::MAX } else { (1u64 << n_sites) - 1 };
    if a | b != all {
        return Err(Error::invalid("partition", "does not cover every site"));
    }
    Ok((a, b))
}

/// Empirical histogram of measured shots.
pub fn sublattice_histogram(shots: &ShotSet, partition: &Partition) -> Result<SublatticeHistogram> {
    let (ma, mb) = masks(partition, shots.n_sites)?;
    if shots.is_empty() {
        return Err(Error::invalid("shots", "empty set"));
    }
    let mut h = SublatticeHistogram::zeros(partition.a.len(), partition.b.len());
    let w = 1.0 / shots.len() as f64;
    for &s in &shots.shots {
        h.add((s & ma).count_ones() as usize, (s & mb).count_ones() as usize, w);
    }
    Ok(h)
}

/// Exact histogram of a probability vector over the `2^N` basis.
pub fn sublattice_histogram_exact(
    n_sites: usize,
    probabilities: &[f64],
    partition: &Partition,
) -> Result<SublatticeHistogram> {
    let (ma, mb) = masks(partition, n_sites)?;
    if probabilities.len() != 1usize << n_sites {
        return Err(Error::DimensionMismatch {
            expected: 1 << n_sites,
            found: probabilities.len(),
        });
    }
    let mut h = SublatticeHistogram::zeros(partition.a.len(), partition.b.len());
    for (s, &p) in probabilities.iter().enumerate() {
        let s = s as u64;
        h.add((s & ma).count_ones() as usize, (s & mb).count_ones() as usize, p);
    }
    Ok(h)
}

/// Histogram of uncorrelated sites at a uniform density: a product of two
/// binomial distributions.
pub fn baseline_histogram(density: f64, partition: &Partition) -> Result<SublatticeHistogram> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid("density", "must lie in [0, 1]"));
    }
    let n = partition.a.len() + partition.b.len();
    masks(partition, n)?;
    let pa = binomial_pmf(partition.a.len(), density);
    let pb = binomial_pmf(partition.b.len(), density);
    let mut h = SublatticeHistogram::zeros(partition.a.len(), partition.b.len());
    for (a, x) in pa.iter().enumerate() {
        for (b, y) in pb.iter().enumerate() {
            h.add(a, b, x * y);
        }
    }
    Ok(h)
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut coeff = 1.0;
    for (k, slot) in out.iter_mut().enumerate() {
        if k > 0 {
            coeff = coeff * (n + 1 - k) as f64 / k as f64;
        }
        *slot = coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LightconeResult {
    /// Crossing time per shell (`None` when the threshold is never reached).
    pub crossings: Vec<Option<f64>>,
    /// All shells cross, in strictly increasing order.
    pub ordered: bool,
    /// Normalised series, same layout as the input.
    pub normalized: Vec<Vec<f64>>,
}

/// Earliest threshold crossing of each normalised shell series.
///
/// `series[s]` and `normalization[s]` are sampled on `times`; entry `s`
/// normally holds the staggered shell average `(-1)^m g2_m` of shell
/// `m = s + 1`, so that antiferromagnetic correlations are positive. Each
/// series is divided by the maximum of its normalisation series over time,
/// and crossings are located by linear interpolation between samples.
pub fn lightcone_crossings(
    times: &[f64],
    series: &[Vec<f64>],
    normalization: &[Vec<f64>],
    threshold: f64,
) -> Result<LightconeResult> {
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("times", "need at least two strictly increasing samples"));
    }
    if series.len() != normalization.len() {
        return Err(Error::DimensionMismatch {
            expected: series.len(),
            found: normalization.len(),
        });
    }
    let mut crossings = Vec::with_capacity(series.len());
    let mut normalized = Vec::with_capacity(series.len());
    for (s, (values, norm)) in series.iter().zip(normalization).enumerate() {
        for v in [values, norm] {
            if v.len() != times.len() {
                return Err(Error::DimensionMismatch {
                    expected: times.len(),
                    found: v.len(),
                });
            }
        }
        let peak = norm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::invalid(
                "normalization",
                format!("series {s} never becomes positive"),
            ));
        }
        let scaled: Vec<f64> = values.iter().map(|v| v / peak).collect();
        let crossing = scaled.iter().position(|&v| v >= threshold).map(|t| {
            if t == 0 {
                times[0]
            } else {
                let (v0, v1) = (scaled[t - 1], scaled[t]);
                times[t - 1] + (threshold - v0) / (v1 - v0) * (times[t] - times[t - 1])
            }
        });
        crossings.push(crossing);
        normalized.push(scaled);
    }
    let ordered = crossings.iter().all(Option::is_some)
        && crossings.windows(2).all(|w| w[0] < w[1]);
    Ok(LightconeResult {
        crossings,
        ordered,
        normalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, displacement_classes, Boundary, LatticeKind, Symmetrization};

    fn synthetic(xi: f64) -> CorrelationMap {
        let g = build_lattice(LatticeKind::Square, &[6, 6], Boundary::Open, 1.0, 1.0).unwrap();
        let classes = displacement_classes(&g, 6, Symmetrization::Quadrants).unwrap();
        CorrelationMap::from_values(&classes, Symmetrization::Quadrants, |c| {
            let m = c.shell as f64;
            (-1f64).powi(c.shell as i32) * (-m / xi).exp()
        })
    }

    #[test]
    fn correlation_length_recovers_generator() {
        for xi in [1.5, 0.5] {
            let fit = fit_correlation_length(&synthetic(xi)).unwrap();
            assert!((fit.xi - xi).abs() < 1e-10, "{}", fit.xi);
        }
    }

    #[test]
    fn zero_map_has_no_signal() {
        let g = build_lattice(LatticeKind::Square, &[4, 4], Boundary::Open, 1.0, 1.0).unwrap();
        let classes = displacement_classes(&g, 4, Symmetrization::Quadrants).unwrap();
        let map = CorrelationMap::from_values(&classes, Symmetrization::Quadrants, |_| 0.0);
        assert!(matches!(fit_correlation_length(&map), Err(Error::NoStaggeredSignal)));
        assert_eq!(neel_structure_factor(&map, 4).unwrap().value, 0.0);
        assert!(matches!(neel_structure_factor(&map, 7), Err(Error::MissingShell(5))));
    }

    #[test]
    fn ideal_neel_pattern_sums_to_forty() {
        let g = build_lattice(LatticeKind::Square, &[10, 10], Boundary::Open, 1.0, 1.0).unwrap();
        let classes = displacement_classes(&g, 4, Symmetrization::Quadrants).unwrap();
        let map = CorrelationMap::from_values(&classes, Symmetrization::Quadrants, |c| {
            0.25 * (-1f64).powi(c.shell as i32)
        });
        let s = neel_structure_factor(&map, 4).unwrap();
        assert!((s.value - 40.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_neel_histogram_and_baseline() {
        let g = build_lattice(LatticeKind::Square, &[6, 6], Boundary::Open, 1.0, 1.0).unwrap();
        let part = g.neel_partition();
        let a: u64 = part.a.iter().fold(0, |acc, i| acc | 1 << i);
        let b: u64 = part.b.iter().fold(0, |acc, i| acc | 1 << i);
        let shots = ShotSet {
            n_sites: 36,
            shots: vec![a, b],
            source: "test".into(),
            errors: Default::default(),
            seed: 0,
        };
        let h = sublattice_histogram(&shots, &part).unwrap();
        assert_eq!(h.get(18, 0), 0.5);
        assert_eq!(h.get(0, 18), 0.5);
        let base = baseline_histogram(0.5, &part).unwrap();
        let c18_9 = 48620.0;
        assert!((base.get(9, 9) - (c18_9 / 262144.0f64).powi(2)).abs() < 1e-15);
        assert!((base.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_partition_rejected() {
        let part = Partition {
            a: vec![0, 1],
            b: vec![1, 2],
        };
        assert!(baseline_histogram(0.5, &part).is_err());
    }

    #[test]
    fn crossing_times_recovered() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let targets = [0.3, 0.45, 0.62];
        let series: Vec<Vec<f64>> = targets
            .iter()
            .map(|&tc| times.iter().map(|&t| 0.2 * t / tc).collect())
            .collect();
        let norm: Vec<Vec<f64>> = series.iter().map(|_| vec![1.0; times.len()]).collect();
        let r = lightcone_crossings(&times, &series, &norm, 0.2).unwrap();
        for (c, t) in r.crossings.iter().zip(targets) {
            assert!((c.unwrap() - t).abs() < 1e-12);
        }
        assert!(r.ordered);
        let self_norm = lightcone_crossings(&times, &series, &series, 0.2).unwrap();
        for s in &self_norm.normalized {
            assert!((s.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        }
    }
}
