use serde::{Deserialize, Serialize};

use super::krylov::{KrylovConfig, KrylovPropagator};
use super::state::QuantumState;
use crate::error::{Error, Result};
use crate::lattice::{displacement_classes, LatticeGeometry, Symmetrization};
use crate::measure::{
    neel_structure_factor, CorrelationMap, CorrelationSource, Moments, NEEL_CUTOFF,
};
use crate::operator::RydbergModel;
use crate::schedule::{Drive, RampSchedule};

/// Placement of the piecewise-constant intervals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    /// Intervals end on the kinks of the ramp (end of rise, end of sweep).
    /// The steps are shared among the ramp phases in proportion to their
    /// durations, and each phase is split evenly. A kink inside an interval
    /// would otherwise dominate the discretisation error.
    #[default]
    RampAligned,
    /// `n_steps` intervals of equal length over the whole ramp.
    Uniform,
}

/// Settings of a piecewise-constant propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    /// Number of intervals the schedule is split into.
    pub n_steps: usize,
    pub grid: TimeGrid,
    pub krylov: KrylovConfig,
    /// Times (us) at which the state is recorded. They split intervals
    /// exactly, without changing the drive approximation.
    pub snapshots: Vec<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            n_steps: 200,
            grid: TimeGrid::default(),
            krylov: KrylovConfig::default(),
            snapshots: Vec::new(),
        }
    }
}

impl EvolutionConfig {
    pub fn with_steps(n_steps: usize) -> Self {
        EvolutionConfig {
            n_steps,
            ..Self::default()
        }
    }

    pub fn with_snapshots(mut self, times: &[f64]) -> Self {
        self.snapshots = times.to_vec();
        self
    }
}

/// A stretch of constant drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub drive: Drive,
    /// The state at `t1` is a requested snapshot.
    pub snapshot_after: bool,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub state: QuantumState,
}

/// Split `[0, duration]` into `n_steps` intervals laid out by `grid`, with
/// the endpoint average drive on each, then cut intervals at the snapshot
/// times. Cutting does not change the drive of an interval.
///
/// Returns the segments and whether a snapshot at `t = 0` was requested.
pub fn piecewise_segments(
    schedule: &RampSchedule,
    n_steps: usize,
    grid: TimeGrid,
    snapshots: &[f64],
) -> Result<(Vec<Segment>, bool)> {
    if n_steps == 0 {
        return Err(Error::invalid("n_steps", "must be positive"));
    }
    let total = schedule.duration();
    let slack = 1e-12 * total.max(1.0);
    let mut times: Vec<f64> = Vec::with_capacity(snapshots.len());
    for &t in snapshots {
        if !(t.is_finite() && t >= -slack && t <= total + slack) {
            return Err(Error::invalid(
                "snapshots",
                format!("time {t} outside [0, {total}]"),
            ));
        }
        times.push(t.clamp(0.0, total));
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= slack);
    let at_zero = times.first().is_some_and(|&t| t <= slack);

    let edges = interval_edges(schedule, n_steps, grid);
    let mut segments = Vec::with_capacity(n_steps + times.len());
    let mut pending = times.iter().copied().filter(|&t| t > slack).peekable();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let da = schedule.drive_clamped(a);
        let db = schedule.drive_clamped(b);
        let drive = Drive {
            omega: 0.5 * (da.omega + db.omega),
            delta: 0.5 * (da.delta + db.delta),
        };
        let mut start = a;
        while let Some(&t) = pending.peek() {
            if t > b + slack {
                break;
            }
            pending.next();
            if (t - b).abs() <= slack {
                break;
            }
            segments.push(Segment {
                t0: start,
                t1: t,
                drive,
                snapshot_after: true,
            });
            start = t;
        }
        let snap_at_b = times.iter().any(|&t| t > slack && (t - b).abs() <= slack);
        segments.push(Segment {
            t0: start,
            t1: b,
            drive,
            snapshot_after: snap_at_b,
        });
    }
    Ok((segments, at_zero))
}

/// Interval boundaries from `0` to `schedule.duration()`.
fn interval_edges(schedule: &RampSchedule, n_steps: usize, grid: TimeGrid) -> Vec<f64> {
    let total = schedule.duration();
    let mut knots = vec![0.0];
    if grid == TimeGrid::RampAligned {
        knots.extend(schedule.breakpoints());
    }
    knots.push(total);
    if knots.len() - 1 > n_steps {
        knots = vec![0.0, total];
    }
    let counts = share_steps(&knots, n_steps);
    let mut edges = Vec::with_capacity(n_steps + 1);
    edges.push(0.0);
    for (w, &count) in knots.windows(2).zip(&counts) {
        let (a, b) = (w[0], w[1]);
        let dt = (b - a) / count as f64;
        for n in 1..count {
            edges.push(a + n as f64 * dt);
        }
        edges.push(b);
    }
    edges
}

/// Steps per phase, proportional to phase length, at least one each, by
/// largest remainder.
fn share_steps(knots: &[f64], n_steps: usize) -> Vec<usize> {
    let total = knots[knots.len() - 1] - knots[0];
    let ideal: Vec<f64> = knots
        .windows(2)
        .map(|w| n_steps as f64 * (w[1] - w[0]) / total)
        .collect();
    let mut counts: Vec<usize> = ideal.iter().map(|&x| (x.floor() as usize).max(1)).collect();
    let remainder = |counts: &[usize], i: usize| ideal[i] - counts[i] as f64;
    while counts.iter().sum::<usize>() < n_steps {
        let i = (0..counts.len())
            .max_by(|&i, &j| remainder(&counts, i).total_cmp(&remainder(&counts, j)))
            .expect("at least one phase");
        counts[i] += 1;
    }
    while counts.iter().sum::<usize>() > n_steps {
        let i = (0..counts.len())
            .filter(|&i| counts[i] > 1)
            .min_by(|&i, &j| remainder(&counts, i).total_cmp(&remainder(&counts, j)))
            .expect("more steps than phases");
        counts[i] -= 1;
    }
    counts
}

/// Evolve `initial` under `schedule` and return the requested snapshots
/// (the final state is always the last entry).
pub fn evolve_unitary(
    initial: &QuantumState,
    schedule: &RampSchedule,
    model: &RydbergModel,
    config: &EvolutionConfig,
) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    let last = evolve_unitary_with(initial, schedule, model, config, |s| {
        out.push(Snapshot {
            time: s.time,
            state: s.clone(),
        });
        Ok(())
    })?;
    let end_recorded = out
        .last()
        .is_some_and(|s| (s.time - last.time).abs() <= 1e-12 * last.time.max(1.0));
    if !end_recorded {
        out.push(Snapshot {
            time: last.time,
            state: last,
        });
    }
    Ok(out)
}

/// Evolve and hand every snapshot to `observer`; returns the final state.
pub fn evolve_unitary_with<F>(
    initial: &QuantumState,
    schedule: &RampSchedule,
    model: &RydbergModel,
    config: &EvolutionConfig,
    mut observer: F,
) -> Result<QuantumState>
where
    F: FnMut(&QuantumState) -> Result<()>,
{
    if initial.n_sites() != model.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: initial.dim(),
        });
    }
    let (segments, at_zero) = piecewise_segments(schedule, config.n_steps, config.grid, &config.snapshots)?;
    let mut state = initial.clone();
    state.time = 0.0;
    if at_zero {
        observer(&state)?;
    }
    let mut krylov = KrylovPropagator::new(config.krylov)?;
    for seg in &segments {
        let h = model.at(seg.drive);
        krylov.apply(&h, state.amplitudes_mut(), seg.duration())?;
        state.time = seg.t1;
        if seg.snapshot_after {
            observer(&state)?;
        }
    }
    let norm = state.norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            context: "state after evolution",
        });
    }
    Ok(state)
}

/// Difference between runs at `n_steps` and `n_steps / 2`.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub n_steps: usize,
    pub max_density_diff: f64,
    pub max_g2_diff: f64,
    pub neel_diff: f64,
}

/// Compare final observables at `config.n_steps` and `config.n_steps / 2`
/// intervals. Snapshots in `config` are ignored.
pub fn check_convergence(
    initial: &QuantumState,
    schedule: &RampSchedule,
    model: &RydbergModel,
    geometry: &LatticeGeometry,
    config: &EvolutionConfig,
) -> Result<ConvergenceReport> {
    let n_steps = config.n_steps;
    if n_steps < 2 || !n_steps.is_multiple_of(2) {
        return Err(Error::invalid("n_steps", "must be even and at least 2"));
    }
    if geometry.len() != model.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: model.n_sites(),
            found: geometry.len(),
        });
    }
    let run = |steps: usize| -> Result<Moments> {
        let cfg = EvolutionConfig {
            n_steps: steps,
            grid: config.grid,
            krylov: config.krylov,
            snapshots: Vec::new(),
        };
        let state = evolve_unitary_with(initial, schedule, model, &cfg, |_| Ok(()))?;
        Ok(Moments::from_state(&state))
    };
    let fine = run(n_steps)?;
    let coarse = run(n_steps / 2)?;

    let max_density_diff = fine
        .density()
        .iter()
        .zip(coarse.density())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let sym = Symmetrization::default_for(geometry.kind());
    let max_shell = (0..geometry.len())
        .flat_map(|i| (0..geometry.len()).map(move |j| (i, j)))
        .map(|(i, j)| geometry.shell(i, j))
        .max()
        .unwrap_or(0);
    let (max_g2_diff, neel_diff) = if max_shell == 0 {
        (0.0, 0.0)
    } else {
        let classes = displacement_classes(geometry, max_shell, sym)?;
        let a = CorrelationMap::compute(CorrelationSource::Exact(&fine), &classes, sym)?;
        let b = CorrelationMap::compute(CorrelationSource::Exact(&coarse), &classes, sym)?;
        let g2 = a
            .entries
            .iter()
            .zip(&b.entries)
            .map(|(x, y)| (x.g2 - y.g2).abs())
            .fold(0.0, f64::max);
        let cutoff = max_shell.min(NEEL_CUTOFF);
        let s = neel_structure_factor(&a, cutoff)?.value - neel_structure_factor(&b, cutoff)?.value;
        (g2, s.abs())
    };
    Ok(ConvergenceReport {
        n_steps,
        max_density_diff,
        max_g2_diff,
        neel_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};
    use crate::operator::{build_couplings, CouplingSpec};
    use nalgebra::DVector;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn chain(n: usize, u: f64) -> (LatticeGeometry, RydbergModel) {
        let g = build_lattice(LatticeKind::Chain, &[n], Boundary::Open, 1.0, 1.0).unwrap();
        let m = RydbergModel::new(build_couplings(&g, CouplingSpec::isotropic_nn(u)).unwrap()).unwrap();
        (g, m)
    }

    #[test]
    fn rabi_pi_pulse() {
        let (_, m) = chain(1, 0.0);
        let omega = 2.0;
        let s = RampSchedule::constant(omega, 0.0, PI / omega).unwrap();
        let out = evolve_unitary(&QuantumState::all_down(1).unwrap(), &s, &m, &EvolutionConfig::with_steps(7)).unwrap();
        let p = out.last().unwrap().state.site_densities()[0];
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn blockade_enhances_the_rabi_frequency() {
        let (_, m) = chain(2, 200.0);
        let omega = 1.0;
        // A pi pulse at the collective frequency sqrt(2) Omega transfers
        // the pair into the symmetric single excitation.
        let t = PI / (2f64.sqrt() * omega);
        let s = RampSchedule::constant(omega, 0.0, t).unwrap();
        let out = evolve_unitary(&QuantumState::all_down(2).unwrap(), &s, &m, &EvolutionConfig::with_steps(4)).unwrap();
        let p = out.last().unwrap().state.probabilities();
        assert!(p[3] < 1e-3, "double excitation {}", p[3]);
        assert!((p[1] + p[2] - 1.0).abs() < 2e-3);
    }

    #[test]
    fn static_field_keeps_populations() {
        let (_, m) = chain(4, 1.0);
        let s = RampSchedule::sweep(0.0, -2.0, 3.0, 1.0).unwrap();
        let amps: Vec<Complex64> = (0..16).map(|b| Complex64::new(1.0 + b as f64, 0.5)).collect();
        let psi = QuantumState::normalized(4, amps).unwrap();
        let cfg = EvolutionConfig::with_steps(10).with_snapshots(&[0.0, 0.3, 0.7]);
        let out = evolve_unitary(&psi, &s, &m, &cfg).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].time, 0.0);
        for snap in &out {
            for (a, b) in snap.state.probabilities().iter().zip(psi.probabilities()) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn snapshots_do_not_change_the_result() {
        let (_, m) = chain(5, 2.0);
        let s = RampSchedule::sweep(1.5, -3.0, 3.0, 1.2).unwrap();
        let psi = QuantumState::all_down(5).unwrap();
        let plain = evolve_unitary(&psi, &s, &m, &EvolutionConfig::with_steps(20)).unwrap();
        let cfg = EvolutionConfig::with_steps(20).with_snapshots(&[0.013, 0.6, 1.2]);
        let snap = evolve_unitary(&psi, &s, &m, &cfg).unwrap();
        assert_eq!(snap.len(), 3);
        let d = plain.last().unwrap().state.distance(&snap.last().unwrap().state);
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn matches_dense_piecewise_product() {
        let (_, m) = chain(6, 3.0);
        let s = RampSchedule::sweep(2.0, -4.0, 4.0, 1.5).unwrap();
        let psi = QuantumState::all_down(6).unwrap();
        let cfg = EvolutionConfig::with_steps(30);
        let got = evolve_unitary(&psi, &s, &m, &cfg).unwrap().pop().unwrap().state;
        let (segments, _) = piecewise_segments(&s, 30, TimeGrid::default(), &[]).unwrap();
        let mut v = DVector::from_column_slice(psi.amplitudes());
        for seg in &segments {
            let h = m.at(seg.drive).to_dense();
            v = (h * Complex64::new(0.0, -seg.duration())).exp() * v;
        }
        let d: f64 = got
            .amplitudes()
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(d < 1e-8, "{d}");
        assert!((got.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_propagation_returns_the_initial_state() {
        let (_, m) = chain(6, 2.0);
        let s = RampSchedule::sweep(1.8, -5.0, 4.0, 1.0).unwrap();
        let psi = QuantumState::all_down(6).unwrap();
        let (segments, _) = piecewise_segments(&s, 50, TimeGrid::default(), &[]).unwrap();
        let mut k = KrylovPropagator::new(KrylovConfig::default()).unwrap();
        let mut v = psi.amplitudes().to_vec();
        for seg in &segments {
            k.apply(&m.at(seg.drive), &mut v, seg.duration()).unwrap();
        }
        for seg in segments.iter().rev() {
            k.apply(&m.at(seg.drive), &mut v, -seg.duration()).unwrap();
        }
        let back = QuantumState::from_amplitudes(6, v).unwrap();
        assert!(back.distance(&psi) < 1e-8);
    }

    #[test]
    fn energy_is_conserved_under_a_constant_drive() {
        let (_, m) = chain(7, 2.0);
        let drive = Drive { omega: 1.3, delta: 0.8 };
        let s = RampSchedule::constant(drive.omega, drive.delta, 2.0).unwrap();
        let amps: Vec<Complex64> = (0..128)
            .map(|b| Complex64::new((b as f64 * 0.37).sin(), (b as f64 * 0.11).cos()))
            .collect();
        let psi = QuantumState::normalized(7, amps).unwrap();
        let h = m.at(drive);
        let e0 = h.expectation(psi.amplitudes()).unwrap().re;
        let out = evolve_unitary(&psi, &s, &m, &EvolutionConfig::with_steps(10)).unwrap();
        let e1 = h.expectation(out.last().unwrap().state.amplitudes()).unwrap().re;
        assert!(((e1 - e0) / e0).abs() < 1e-9);
    }

    #[test]
    fn convergence_check() {
        let (g, m) = chain(5, 2.0);
        let psi = QuantumState::all_down(5).unwrap();
        let flat = RampSchedule::sweep(0.0, -1.0, 2.0, 1.0).unwrap();
        let r = check_convergence(&psi, &flat, &m, &g, &EvolutionConfig::with_steps(20)).unwrap();
        assert!(r.max_density_diff < 1e-14 && r.max_g2_diff < 1e-14);
        let swept = RampSchedule::sweep(3.0, -8.0, 8.0, 1.5).unwrap();
        let coarse = check_convergence(&psi, &swept, &m, &g, &EvolutionConfig::with_steps(2)).unwrap();
        let fine = check_convergence(&psi, &swept, &m, &g, &EvolutionConfig::with_steps(200)).unwrap();
        assert!(coarse.max_density_diff > 1e-2);
        assert!(fine.max_density_diff < coarse.max_density_diff / 10.0);
        assert!(check_convergence(&psi, &swept, &m, &g, &EvolutionConfig::with_steps(3)).is_err());
    }
}
