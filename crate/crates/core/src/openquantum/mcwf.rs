use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DephasingModel;
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, Symmetrization};
use crate::measure::{
    g2_connected, neel_structure_factor, CorrelationMap, CorrelationSource, Moments, NEEL_CUTOFF,
};
use crate::operator::RydbergModel;
use crate::propagate::{piecewise_segments, EvolutionConfig, KrylovPropagator, QuantumState, Segment};
use crate::schedule::RampSchedule;

/// Trajectories are run and reduced in batches of this size. The batch size
/// is fixed so that results do not depend on the thread count.
const BATCH: usize = 32;

/// How quantum jumps are placed in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum JumpScheme {
    /// Draw a uniform `r` and jump when the squared norm of the
    /// unnormalised state decays to `r`; the crossing time is located
    /// inside the Krylov subspace.
    #[default]
    WaitingTime,
    /// Split every interval into substeps with jump probability at most
    /// `max_probability` and draw a jump per substep.
    FirstOrder { max_probability: f64 },
}


/// Choice of jump operators. Both reproduce the same master equation,
/// since `gamma D[n_i] = (gamma/4) D[sigma^z_i]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unraveling {
    /// Jumps `n_i` at rate `gamma <n_i>`; the no-jump generator is
    /// `H - i gamma/2 sum_i n_i`.
    #[default]
    Projector,
    /// Phase kicks `sigma^z_i` at the state-independent rate `gamma/4` per
    /// site; between kicks the evolution is unitary. Jump times do not
    /// depend on the state, and trajectories never collapse onto
    /// excited sites, which usually lowers the trajectory-to-trajectory
    /// spread of correlators. `scheme` is ignored.
    PhaseFlip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McwfConfig {
    pub n_traj: usize,
    pub seed: u64,
    pub evolution: EvolutionConfig,
    pub scheme: JumpScheme,
    pub unraveling: Unraveling,
}

impl McwfConfig {
    pub fn new(n_traj: usize, seed: u64, evolution: EvolutionConfig) -> Self {
        McwfConfig {
            n_traj,
            seed,
            evolution,
            scheme: JumpScheme::default(),
            unraveling: Unraveling::default(),
        }
    }
}

/// Trajectory statistics at one snapshot time.
#[derive(Clone, Debug)]
pub struct EnsembleSnapshot {
    pub time: f64,
    /// Occupation moments of every trajectory, in trajectory order.
    pub trajectories: Vec<Moments>,
    /// Trajectory average of `|psi_b|^2`, i.e. the diagonal of the density
    /// matrix estimate.
    pub mean_probabilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub n_sites: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub dephasing: DephasingModel,
    pub scheme: JumpScheme,
    pub unraveling: Unraveling,
    pub snapshots: Vec<EnsembleSnapshot>,
    /// Total number of jumps over all trajectories.
    pub total_jumps: u64,
}

struct TrajectoryRecord<T> {
    moments: Vec<Moments>,
    probabilities: Vec<Vec<f64>>,
    extras: Vec<T>,
    jumps: u64,
}

/// Average `n_traj` quantum trajectories under the no-jump generator
/// `H - i gamma/2 sum_i n_i`, using the same piecewise-constant drive as
/// the unitary propagation. Snapshots default to the final time.
pub fn evolve_mcwf(
    initial: &QuantumState,
    schedule: &RampSchedule,
    model: &RydbergModel,
    dephasing: DephasingModel,
    config: &McwfConfig,
) -> Result<TrajectoryEnsemble> {
    evolve_mcwf_with(initial, schedule, model, dephasing, config, |_| ()).map(|r| r.0)
}

/// [`evolve_mcwf`] that additionally evaluates `observable` on the
/// normalised state of every trajectory at every snapshot. The second
/// result is indexed `[trajectory][snapshot]`.
pub fn evolve_mcwf_with<T, F>(
    initial: &QuantumState,
    schedule: &RampSchedule,
    model: &RydbergModel,
    dephasing: DephasingModel,
    config: &McwfConfig,
    observable: F,
) -> Result<(TrajectoryEnsemble, Vec<Vec<T>>)>
where
    T: Send,
    F: Fn(&[Complex64]) -> T + Sync,
{
    DephasingModel::new(dephasing.gamma)?;
    if config.n_traj == 0 {
        return Err(Error::invalid("n_traj", "must be at least 1"));
    }
    if initial.n_sites() != model.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: initial.dim(),
        });
    }
    if let JumpScheme::FirstOrder { max_probability } = config.scheme {
        if !(max_probability > 0.0 && max_probability < 1.0) {
            return Err(Error::invalid("scheme.max_probability", "must lie in (0, 1)"));
        }
    }
    let mut times = config.evolution.snapshots.clone();
    if times.is_empty() {
        times.push(schedule.duration());
    }
    let (segments, at_zero) = piecewise_segments(schedule, config.evolution.n_steps, config.evolution.grid, &times)?;
    let mut snapshot_times = Vec::new();
    if at_zero {
        snapshot_times.push(0.0);
    }
    snapshot_times.extend(segments.iter().filter(|s| s.snapshot_after).map(|s| s.t1));

    let dim = model.dim();
    let mut snapshots: Vec<EnsembleSnapshot> = snapshot_times
        .iter()
        .map(|&time| EnsembleSnapshot {
            time,
            trajectories: Vec::with_capacity(config.n_traj),
            mean_probabilities: vec![0.0; dim],
        })
        .collect();
    let mut total_jumps = 0;
    let mut extras = Vec::with_capacity(config.n_traj);

    for start in (0..config.n_traj).step_by(BATCH) {
        let end = (start + BATCH).min(config.n_traj);
        let records: Vec<Result<TrajectoryRecord<T>>> = (start..end)
            .into_par_iter()
            .map(|index| {
                run_trajectory(
                    initial,
                    model,
                    dephasing,
                    config,
                    &segments,
                    at_zero,
                    index as u64,
                    &observable,
                )
            })
            .collect();
        for record in records {
            let record = record?;
            total_jumps += record.jumps;
            extras.push(record.extras);
            for ((snap, m), p) in snapshots.iter_mut().zip(record.moments).zip(record.probabilities) {
                snap.trajectories.push(m);
                snap.mean_probabilities
                    .iter_mut()
                    .zip(p)
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    let scale = 1.0 / config.n_traj as f64;
    for snap in &mut snapshots {
        snap.mean_probabilities.iter_mut().for_each(|p| *p *= scale);
    }
    let ensemble = TrajectoryEnsemble {
        n_sites: model.n_sites(),
        n_traj: config.n_traj,
        seed: config.seed,
        dephasing,
        scheme: config.scheme,
        unraveling: config.unraveling,
        snapshots,
        total_jumps,
    };
    Ok((ensemble, extras))
}

#[allow(clippy::too_many_arguments)]
fn run_trajectory<T, F>(
    initial: &QuantumState,
    model: &RydbergModel,
    dephasing: DephasingModel,
    config: &McwfConfig,
    segments: &[Segment],
    at_zero: bool,
    index: u64,
    observable: &F,
) -> Result<TrajectoryRecord<T>>
where
    F: Fn(&[Complex64]) -> T,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let n = model.n_sites();
    let mut krylov = KrylovPropagator::new(config.evolution.krylov)?;
    let mut psi: Vec<Complex64> = initial.amplitudes().to_vec();
    let mut record = TrajectoryRecord {
        moments: Vec::new(),
        probabilities: Vec::new(),
        extras: Vec::new(),
        jumps: 0,
    };
    let observe = |psi: &[Complex64], record: &mut TrajectoryRecord<T>| -> Result<()> {
        let norm_sqr: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        if !(norm_sqr.is_finite() && norm_sqr > 0.0) {
            return Err(Error::NonFinite {
                context: "trajectory amplitudes",
            });
        }
        let p: Vec<f64> = psi.iter().map(|a| a.norm_sqr() / norm_sqr).collect();
        record.moments.push(Moments::from_probabilities(n, &p)?);
        record.probabilities.push(p);
        let scale = norm_sqr.sqrt();
        let normalized: Vec<Complex64> = psi.iter().map(|a| a / scale).collect();
        record.extras.push(observable(&normalized));
        Ok(())
    };
    if at_zero {
        observe(&psi, &mut record)?;
    }
    let damping = 0.5 * dephasing.gamma;
    let mut threshold: f64 = 1.0 - rng.gen::<f64>();

    if config.unraveling == Unraveling::PhaseFlip {
        let rate = 0.25 * dephasing.gamma * n as f64;
        let wait = |rng: &mut ChaCha8Rng| {
            if rate > 0.0 {
                -(1.0 - rng.gen::<f64>()).ln() / rate
            } else {
                f64::INFINITY
            }
        };
        let mut next_kick = wait(&mut rng);
        for seg in segments {
            let h = model.at(seg.drive);
            let mut remaining = seg.duration();
            while remaining > 0.0 {
                if next_kick >= remaining {
                    krylov.apply(&h, &mut psi, remaining)?;
                    next_kick -= remaining;
                    break;
                }
                krylov.apply(&h, &mut psi, next_kick)?;
                remaining -= next_kick;
                let mask = 1usize << rng.gen_range(0..n);
                psi.iter_mut()
                    .enumerate()
                    .filter(|(b, _)| b & mask != 0)
                    .for_each(|(_, a)| *a = -*a);
                record.jumps += 1;
                next_kick = wait(&mut rng);
            }
            if seg.snapshot_after {
                observe(&psi, &mut record)?;
            }
        }
        return Ok(record);
    }

    for seg in segments {
        let h = model.at(seg.drive).with_damping(damping);
        match config.scheme {
            JumpScheme::WaitingTime => {
                let mut remaining = seg.duration();
                while remaining > 0.0 {
                    let target = if damping > 0.0 { Some(threshold) } else { None };
                    let adv = krylov.advance(&h, &mut psi, remaining, target)?;
                    remaining -= adv.elapsed;
                    if adv.hit {
                        jump(&mut psi, n, &mut rng)?;
                        record.jumps += 1;
                        threshold = 1.0 - rng.gen::<f64>();
                    }
                    if remaining <= 1e-14 * seg.duration() {
                        break;
                    }
                }
            }
            JumpScheme::FirstOrder { max_probability } => {
                let mut remaining = seg.duration();
                while remaining > 0.0 {
                    let occupied = total_occupation(&psi, n);
                    let rate = dephasing.gamma * occupied;
                    let dt = if rate > 0.0 {
                        remaining.min(0.5 * max_probability / rate)
                    } else {
                        remaining
                    };
                    krylov.apply(&h, &mut psi, dt)?;
                    let norm_sqr: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
                    let p_jump = 1.0 - norm_sqr;
                    if p_jump > max_probability {
                        return Err(Error::JumpProbability {
                            probability: p_jump,
                            bound: max_probability,
                        });
                    }
                    if rng.gen::<f64>() < p_jump {
                        jump(&mut psi, n, &mut rng)?;
                        record.jumps += 1;
                    } else {
                        let s = norm_sqr.sqrt();
                        psi.iter_mut().for_each(|a| *a /= s);
                    }
                    remaining -= dt;
                    if remaining <= 1e-14 * seg.duration() {
                        break;
                    }
                }
            }
        }
        if seg.snapshot_after {
            observe(&psi, &mut record)?;
        }
    }
    Ok(record)
}

fn total_occupation(psi: &[Complex64], n: usize) -> f64 {
    let norm_sqr: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    let occ: f64 = psi
        .iter()
        .enumerate()
        .map(|(b, a)| a.norm_sqr() * f64::from((b & ((1 << n) - 1)).count_ones()))
        .sum();
    occ / norm_sqr
}

/// Apply `n_i` to `psi` with probability proportional to `<n_i>` and
/// renormalise.
fn jump(psi: &mut [Complex64], n: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut weights = vec![0.0; n];
    for (b, a) in psi.iter().enumerate() {
        let p = a.norm_sqr();
        let mut bits = b;
        while bits != 0 {
            weights[bits.trailing_zeros() as usize] += p;
            bits &= bits - 1;
        }
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::NonFinite {
            context: "jump weights",
        });
    }
    let mut u = rng.gen::<f64>() * total;
    let mut site = n - 1;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            site = i;
            break;
        }
        u -= w;
    }
    let mask = 1usize << site;
    let kept = weights[site].sqrt();
    for (b, a) in psi.iter_mut().enumerate() {
        if b & mask == 0 {
            *a = Complex64::new(0.0, 0.0);
        } else {
            *a /= kept;
        }
    }
    Ok(())
}

impl EnsembleSnapshot {
    /// Trajectory-averaged moments.
    pub fn moments(&self) -> Moments {
        Moments::mean(&self.trajectories).expect("at least one trajectory")
    }

    pub fn source(&self) -> CorrelationSource<'_> {
        CorrelationSource::Samples(&self.trajectories)
    }

    /// Standard error of each site density across trajectories.
    pub fn density_stderr(&self) -> Vec<f64> {
        let n = self.trajectories.len() as f64;
        let mean = self.moments();
        (0..mean.n_sites())
            .map(|i| {
                if n < 2.0 {
                    return f64::NAN;
                }
                let var = self
                    .trajectories
                    .iter()
                    .map(|m| (m.density()[i] - mean.density()[i]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                (var / n).sqrt()
            })
            .collect()
    }

    /// CSV with columns `observable,mean,std_err,n_traj`: site densities,
    /// their average, and when a geometry is given every class `g2` plus
    /// the Néel structure factor.
    pub fn write_csv<W: Write>(&self, writer: W, geometry: Option<&LatticeGeometry>) -> Result<()> {
        let n_traj = self.trajectories.len().to_string();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["observable", "mean", "std_err", "n_traj"])?;
        let mean = self.moments();
        let se = self.density_stderr();
        for (i, (d, e)) in mean.density().iter().zip(&se).enumerate() {
            w.write_record([format!("n_{i}"), d.to_string(), e.to_string(), n_traj.clone()])?;
        }
        let avg_series: Vec<f64> = self.trajectories.iter().map(Moments::mean_density).collect();
        let avg = avg_series.iter().sum::<f64>() / avg_series.len() as f64;
        let avg_se = if avg_series.len() > 1 {
            let k = avg_series.len() as f64;
            (avg_series.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
        } else {
            f64::NAN
        };
        w.write_record(["n_mean".into(), avg.to_string(), avg_se.to_string(), n_traj.clone()])?;
        if let Some(g) = geometry {
            let map = self.correlations(g, NEEL_CUTOFF)?;
            for e in &map.entries {
                w.write_record([
                    format!("g2({},{})", e.canonical.0, e.canonical.1),
                    e.g2.to_string(),
                    e.stderr.to_string(),
                    n_traj.clone(),
                ])?;
            }
            if let Ok(s) = neel_structure_factor(&map, NEEL_CUTOFF) {
                w.write_record(["S_neel".into(), s.value.to_string(), s.stderr.to_string(), n_traj])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Correlation map with jackknife errors over trajectories.
    pub fn correlations(&self, geometry: &LatticeGeometry, max_shell: usize) -> Result<CorrelationMap> {
        g2_connected(
            self.source(),
            geometry,
            max_shell,
            Symmetrization::default_for(geometry.kind()),
        )
    }
}

impl TrajectoryEnsemble {
    pub fn last(&self) -> &EnsembleSnapshot {
        self.snapshots.last().expect("at least one snapshot")
    }
}
