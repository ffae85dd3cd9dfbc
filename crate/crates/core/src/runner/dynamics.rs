//! Ramp dynamics: scans over a ramp parameter, stop-time traces, and the
//! observables of every recorded point.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{AnalysisBlock, ExperimentConfig, Method, ScanParameter};
use super::output::{cell, Bundle, Seeds};
use super::{build_geometry, in_block};
use crate::error::{Error, Result};
use crate::lattice::{count_shortest_paths, displacement_classes, LatticeGeometry, LatticeKind, Symmetrization};
use crate::measure::{
    baseline_histogram, fit_correlation_length, g2_connected, lightcone_crossings, neel_structure_factor,
    sample_shots, sublattice_histogram, sublattice_histogram_exact, CorrelationLength, CorrelationMap,
    CorrelationSource, DetectionErrors, LightconeResult, Moments, NeelFactor, ShotSet, ShotSource,
};
use crate::openquantum::{
    evolve_master_direct, evolve_mcwf, DensityOperator, DephasingModel, MasterConfig, McwfConfig, MASTER_MAX_SITES,
};
use crate::operator::{build_couplings, RydbergModel};
use crate::propagate::{evolve_unitary, EvolutionConfig, KrylovConfig, KrylovPropagator, QuantumState};
use crate::schedule::{build_ramp, RampParams, RampSchedule};
use crate::units::mhz_to_angular;

/// Snapshot times closer than this (us) are the same time.
const TIME_EPS: f64 = 1e-9;

pub(crate) struct DynamicsPlan {
    geometry: LatticeGeometry,
    model: RydbergModel,
    /// Nearest-neighbour coupling in rad/us, when defined.
    u_scale: Option<f64>,
    parameter: Option<ScanParameter>,
    runs: Vec<RunPlan>,
    method: Method,
    evolution: EvolutionConfig,
    dephasing: Option<DephasingModel>,
    mcwf: Option<McwfConfig>,
    compare_unitary: bool,
    shots: Option<ShotPlan>,
    analysis: AnalysisBlock,
    symmetrization: Symmetrization,
    pub(crate) seeds: Seeds,
}

struct RunPlan {
    schedule: RampSchedule,
    t_tot: f64,
    points: Vec<PointPlan>,
    /// Record intermediate snapshots (stop-time scans).
    snapshots: bool,
}

struct PointPlan {
    index: usize,
    scan_value: Option<f64>,
    time: f64,
}

struct ShotPlan {
    n_shots: usize,
    errors: DetectionErrors,
    seed: u64,
    write_shots: bool,
}

pub(crate) fn plan(config: &ExperimentConfig) -> Result<DynamicsPlan> {
    let geometry = build_geometry(&config.geometry)?;
    let spec = config
        .couplings
        .resolve(geometry.spacing_um())
        .map_err(|e| in_block("couplings", e))?;
    let couplings = build_couplings(&geometry, spec).map_err(|e| in_block("couplings", e))?;
    let model = RydbergModel::new(couplings).map_err(|e| in_block("geometry", e))?;
    let u_scale = config.couplings.nn_scale(geometry.spacing_um());

    let base = config
        .schedule
        .clone()
        .ok_or_else(|| Error::invalid("schedule", "the dynamics task needs a schedule block"))?;
    let ev = config
        .evolution
        .as_ref()
        .ok_or_else(|| Error::invalid("evolution", "the dynamics task needs an evolution block"))?;

    let base_schedule = build_ramp(&base).map_err(|e| in_block("schedule", e))?;
    let (parameter, runs) = match &config.scan {
        None => (
            None,
            vec![RunPlan {
                t_tot: base_schedule.total_duration(),
                points: vec![PointPlan {
                    index: 0,
                    scan_value: None,
                    time: base_schedule.total_duration(),
                }],
                schedule: base_schedule,
                snapshots: false,
            }],
        ),
        Some(scan) => {
            let values = scan.resolved_values()?;
            if scan.sweep_rate_mhz_per_us.is_some() && scan.parameter != ScanParameter::DeltaFinalMhz {
                return Err(Error::invalid(
                    "scan.sweep_rate_mhz_per_us",
                    "only applies to delta_final_mhz scans",
                ));
            }
            let runs = match scan.parameter {
                ScanParameter::StopTimeUs => vec![stop_time_run(base_schedule, &values)?],
                ScanParameter::TSweepUs | ScanParameter::DeltaFinalMhz => values
                    .iter()
                    .enumerate()
                    .map(|(index, &v)| {
                        let params = scanned_params(&base, scan.parameter, v, scan.sweep_rate_mhz_per_us)?;
                        let schedule =
                            build_ramp(&params).map_err(|e| in_block(&format!("scan.values[{index}]"), e))?;
                        Ok(RunPlan {
                            t_tot: schedule.total_duration(),
                            points: vec![PointPlan {
                                index,
                                scan_value: Some(v),
                                time: schedule.total_duration(),
                            }],
                            schedule,
                            snapshots: false,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            (Some(scan.parameter), runs)
        }
    };

    if ev.n_steps == 0 {
        return Err(Error::invalid("evolution.n_steps", "must be positive"));
    }
    let krylov = KrylovConfig {
        tol: ev.krylov_tol,
        max_dim: ev.krylov_max_dim,
        ..KrylovConfig::default()
    };
    KrylovPropagator::new(krylov).map_err(|e| in_block("evolution", e))?;
    let evolution = EvolutionConfig {
        n_steps: ev.n_steps,
        grid: ev.time_grid,
        krylov,
        snapshots: Vec::new(),
    };

    let dephasing = match (ev.method, ev.hbar_gamma_over_u, ev.gamma_mhz) {
        (Method::Unitary, None, None) => None,
        (Method::Unitary, _, _) => {
            return Err(Error::invalid(
                "evolution.hbar_gamma_over_u",
                "dephasing rates only apply to the mcwf and master methods",
            ))
        }
        (_, Some(ratio), None) => {
            let u = u_scale.ok_or_else(|| {
                Error::invalid(
                    "evolution.hbar_gamma_over_u",
                    "needs a nearest-neighbour coupling scale; give gamma_mhz instead",
                )
            })?;
            Some(DephasingModel::from_ratio(ratio, u).map_err(|e| in_block("evolution", e))?)
        }
        (_, None, Some(g)) => Some(DephasingModel::new(mhz_to_angular(g)).map_err(|e| in_block("evolution", e))?),
        _ => {
            return Err(Error::invalid(
                "evolution.hbar_gamma_over_u",
                "give exactly one of hbar_gamma_over_u, gamma_mhz",
            ))
        }
    };
    let mut seeds = Seeds {
        base: config.seed,
        ..Seeds::default()
    };
    let mcwf = if ev.method == Method::Mcwf {
        if ev.n_traj == 0 {
            return Err(Error::invalid("evolution.n_traj", "must be positive"));
        }
        let seed = ev.seed.unwrap_or(config.seed);
        seeds.trajectories = Some(seed);
        let mut c = McwfConfig::new(ev.n_traj, seed, evolution.clone());
        c.unraveling = ev.unraveling;
        c.scheme = ev.scheme;
        Some(c)
    } else {
        None
    };
    if ev.method == Method::Master && geometry.len() > MASTER_MAX_SITES {
        return Err(Error::TooLarge {
            sites: geometry.len(),
            limit: MASTER_MAX_SITES,
            method: "direct master-equation integration",
        });
    }
    let compare_unitary = ev.compare_unitary && ev.method != Method::Unitary;

    let shots = match &config.measurement {
        None => None,
        Some(m) => {
            if m.n_shots == 0 {
                return Err(Error::invalid("measurement.n_shots", "must be positive"));
            }
            let errors = DetectionErrors::new(m.epsilon, m.epsilon_prime).map_err(|e| in_block("measurement", e))?;
            let seed = m.seed.unwrap_or(config.seed.wrapping_add(1));
            seeds.shots = Some(seed);
            Some(ShotPlan {
                n_shots: m.n_shots,
                errors,
                seed,
                write_shots: m.write_shots,
            })
        }
    };

    let analysis = config.analysis.clone();
    let symmetrization = Symmetrization::default_for(geometry.kind());
    check_analysis(&analysis, &geometry, symmetrization, parameter, &runs, ev.method, compare_unitary)?;

    Ok(DynamicsPlan {
        geometry,
        model,
        u_scale,
        parameter,
        runs,
        method: ev.method,
        evolution,
        dephasing,
        mcwf,
        compare_unitary,
        shots,
        analysis,
        symmetrization,
        seeds,
    })
}

fn scanned_params(base: &RampParams, parameter: ScanParameter, v: f64, rate: Option<f64>) -> Result<RampParams> {
    let mut p = base.clone();
    match parameter {
        ScanParameter::TSweepUs => p.t_sweep_us = v,
        ScanParameter::DeltaFinalMhz => {
            p.delta_final_mhz = v;
            if let Some(rate) = rate {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(Error::invalid("scan.sweep_rate_mhz_per_us", "must be positive"));
                }
                p.t_sweep_us = (v - p.delta0_mhz) / rate;
            }
        }
        ScanParameter::StopTimeUs => unreachable!("stop times share one run"),
    }
    Ok(p)
}

fn stop_time_run(schedule: RampSchedule, values: &[f64]) -> Result<RunPlan> {
    let total = schedule.total_duration();
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("scan.values", "stop times must be strictly increasing"));
    }
    if values[0] < 0.0 || values[values.len() - 1] > total + TIME_EPS {
        return Err(Error::invalid(
            "scan.values",
            format!("stop times must lie in [0, {total}] us"),
        ));
    }
    let last = values[values.len() - 1].min(total);
    // Once the drive is off the Hamiltonian is diagonal, so populations and
    // correlators no longer change: a stopped ramp measured later equals the
    // running ramp sampled at the stop time.
    let schedule = if last < total - TIME_EPS {
        schedule.stopped_at(last).map_err(|e| in_block("scan", e))?
    } else {
        schedule
    };
    Ok(RunPlan {
        schedule,
        t_tot: total,
        points: values
            .iter()
            .enumerate()
            .map(|(index, &t)| PointPlan {
                index,
                scan_value: Some(t),
                time: t.min(total),
            })
            .collect(),
        snapshots: true,
    })
}

fn check_analysis(
    analysis: &AnalysisBlock,
    geometry: &LatticeGeometry,
    symmetrization: Symmetrization,
    parameter: Option<ScanParameter>,
    runs: &[RunPlan],
    method: Method,
    compare_unitary: bool,
) -> Result<()> {
    if analysis.max_shell == 0 {
        return Err(Error::invalid("analysis.max_shell", "must be at least 1"));
    }
    if analysis.neel_cutoff == 0 || analysis.neel_cutoff > analysis.max_shell {
        return Err(Error::invalid("analysis.neel_cutoff", "must lie in 1..=max_shell"));
    }
    displacement_classes(geometry, analysis.max_shell, symmetrization).map_err(|e| in_block("analysis", e))?;
    if analysis.histograms && geometry.kind() == LatticeKind::Triangular {
        return Err(Error::invalid(
            "analysis.histograms",
            "sublattice histograms need a bipartite (chain or square) array",
        ));
    }
    if let Some(threshold) = analysis.lightcone_threshold {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::invalid("analysis.lightcone_threshold", "must lie in (0, 1]"));
        }
        if parameter != Some(ScanParameter::StopTimeUs) || runs[0].points.len() < 2 {
            return Err(Error::invalid(
                "analysis.lightcone_threshold",
                "needs a stop_time_us scan with at least two points",
            ));
        }
        if method != Method::Unitary && !compare_unitary {
            return Err(Error::invalid(
                "analysis.lightcone_threshold",
                "normalisation needs the dephasing-free run; set evolution.compare_unitary",
            ));
        }
        if analysis.lightcone_shells == 0 || analysis.lightcone_shells > analysis.max_shell {
            return Err(Error::invalid("analysis.lightcone_shells", "must lie in 1..=max_shell"));
        }
    }
    Ok(())
}

/// Expectation values at one recorded time.
struct Raw {
    time: f64,
    exact: Option<Moments>,
    samples: Vec<Moments>,
    probabilities: Vec<f64>,
}

/// Observables derived from one recorded time.
pub(crate) struct Observation {
    densities: Vec<f64>,
    density_stderr: Vec<f64>,
    n_mean: f64,
    n_mean_stderr: f64,
    map: CorrelationMap,
    neel: Option<NeelFactor>,
    xi: Option<CorrelationLength>,
    probabilities: Vec<f64>,
}

struct ShotObservation {
    set: ShotSet,
    n_mean: f64,
    n_mean_stderr: f64,
    map: CorrelationMap,
    neel: Option<NeelFactor>,
}

pub(crate) struct PointResult {
    index: usize,
    scan_value: Option<f64>,
    time: f64,
    t_tot: f64,
    main: Observation,
    unitary: Option<Observation>,
    shots: Option<ShotObservation>,
    jumps_per_trajectory: Option<f64>,
}

pub(crate) struct DynamicsResult {
    points: Vec<PointResult>,
    lightcone: Option<(LightconeResult, LightconeResult)>,
}

pub(crate) fn execute(plan: &DynamicsPlan) -> Result<DynamicsResult> {
    let per_run: Vec<Vec<PointResult>> = plan
        .runs
        .par_iter()
        .map(|run| execute_run(plan, run))
        .collect::<Result<_>>()?;
    let points: Vec<PointResult> = per_run.into_iter().flatten().collect();
    let lightcone = match plan.analysis.lightcone_threshold {
        Some(threshold) => Some(lightcone(plan, &points, threshold)?),
        None => None,
    };
    Ok(DynamicsResult { points, lightcone })
}

fn execute_run(plan: &DynamicsPlan, run: &RunPlan) -> Result<Vec<PointResult>> {
    let n = plan.geometry.len();
    let initial = QuantumState::all_down(n)?;
    let mut evolution = plan.evolution.clone();
    if run.snapshots {
        evolution.snapshots = run.points.iter().map(|p| p.time).collect();
    }
    let unitary = |evolution: &EvolutionConfig| -> Result<Vec<Raw>> {
        Ok(evolve_unitary(&initial, &run.schedule, &plan.model, evolution)?
            .into_iter()
            .map(|s| {
                let m = Moments::from_state(&s.state);
                Raw {
                    time: s.time,
                    exact: Some(m),
                    samples: Vec::new(),
                    probabilities: s.state.probabilities(),
                }
            })
            .collect())
    };
    let mut jumps = None;
    let main: Vec<Raw> = match plan.method {
        Method::Unitary => unitary(&evolution)?,
        Method::Mcwf => {
            let mut config = plan.mcwf.clone().expect("planned");
            config.evolution = evolution.clone();
            let dephasing = plan.dephasing.expect("planned");
            let ensemble = evolve_mcwf(&initial, &run.schedule, &plan.model, dephasing, &config)?;
            jumps = Some(ensemble.total_jumps as f64 / ensemble.n_traj as f64);
            ensemble
                .snapshots
                .into_iter()
                .map(|s| Raw {
                    time: s.time,
                    exact: None,
                    samples: s.trajectories,
                    probabilities: s.mean_probabilities,
                })
                .collect()
        }
        Method::Master => {
            let config = MasterConfig {
                n_steps: evolution.n_steps,
                grid: evolution.grid,
                snapshots: evolution.snapshots.clone(),
                ..MasterConfig::default()
            };
            let rho0 = DensityOperator::pure(&initial)?;
            let dephasing = plan.dephasing.expect("planned");
            evolve_master_direct(&rho0, &run.schedule, &plan.model, dephasing, &config)?
                .into_iter()
                .map(|rho| {
                    let p = rho.probabilities();
                    Ok(Raw {
                        time: rho.time,
                        exact: Some(Moments::from_probabilities(n, &p)?),
                        samples: Vec::new(),
                        probabilities: p,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    let reference = if plan.compare_unitary {
        Some(unitary(&evolution)?)
    } else {
        None
    };

    let main = select(main, run)?;
    let reference = reference.map(|r| select(r, run)).transpose()?;
    let mut reference = reference.map(|r| r.into_iter());
    run.points
        .iter()
        .zip(main)
        .map(|(p, raw)| {
            let main = observe(plan, raw)?;
            let unitary = match reference.as_mut() {
                Some(it) => Some(observe(plan, it.next().expect("same length"))?),
                None => None,
            };
            let shots = match &plan.shots {
                Some(s) => Some(observe_shots(plan, s, p.index, &main.probabilities)?),
                None => None,
            };
            Ok(PointResult {
                index: p.index,
                scan_value: p.scan_value,
                time: p.time,
                t_tot: run.t_tot,
                main,
                unitary,
                shots,
                jumps_per_trajectory: jumps,
            })
        })
        .collect()
}

/// Match recorded snapshots to the planned points, in order.
fn select(raw: Vec<Raw>, run: &RunPlan) -> Result<Vec<Raw>> {
    if !run.snapshots {
        let last = raw.into_iter().last().ok_or(Error::NonFinite {
            context: "empty evolution output",
        })?;
        return Ok(vec![last]);
    }
    let mut out = Vec::with_capacity(run.points.len());
    let mut it = raw.into_iter().peekable();
    for p in &run.points {
        while it.peek().is_some_and(|r| r.time < p.time - TIME_EPS) {
            it.next();
        }
        match it.next() {
            Some(r) if (r.time - p.time).abs() <= TIME_EPS => out.push(r),
            _ => {
                return Err(Error::NonFinite {
                    context: "snapshot times of the evolution output",
                })
            }
        }
    }
    Ok(out)
}

fn observe(plan: &DynamicsPlan, raw: Raw) -> Result<Observation> {
    let (source, densities, density_stderr, n_mean, n_mean_stderr) = match &raw.exact {
        Some(m) => (
            CorrelationSource::Exact(m),
            m.density().to_vec(),
            vec![0.0; m.n_sites()],
            m.mean_density(),
            0.0,
        ),
        None => {
            let mean = Moments::mean(&raw.samples)?;
            let per_site = (0..mean.n_sites())
                .map(|i| stderr(raw.samples.iter().map(|s| s.density()[i])))
                .collect();
            let n_se = stderr(raw.samples.iter().map(Moments::mean_density));
            (
                CorrelationSource::Samples(&raw.samples),
                mean.density().to_vec(),
                per_site,
                mean.mean_density(),
                n_se,
            )
        }
    };
    let map = g2_connected(source, &plan.geometry, plan.analysis.max_shell, plan.symmetrization)?;
    let neel = neel_structure_factor(&map, plan.analysis.neel_cutoff).ok();
    let xi = if plan.analysis.correlation_length {
        fit_correlation_length(&map).ok()
    } else {
        None
    };
    Ok(Observation {
        densities,
        density_stderr,
        n_mean,
        n_mean_stderr,
        map,
        neel,
        xi,
        probabilities: raw.probabilities,
    })
}

fn observe_shots(plan: &DynamicsPlan, s: &ShotPlan, index: usize, probabilities: &[f64]) -> Result<ShotObservation> {
    let n_sites = plan.geometry.len();
    let set = sample_shots(
        ShotSource::Probabilities {
            n_sites,
            probabilities,
        },
        s.n_shots,
        s.errors,
        s.seed.wrapping_add(index as u64),
    )?;
    let fractions = set.shots.iter().map(|b| f64::from(b.count_ones()) / n_sites as f64);
    let n_mean_stderr = stderr(fractions);
    let map = g2_connected(
        CorrelationSource::Shots(&set),
        &plan.geometry,
        plan.analysis.max_shell,
        plan.symmetrization,
    )?;
    let neel = neel_structure_factor(&map, plan.analysis.neel_cutoff).ok();
    Ok(ShotObservation {
        n_mean: set.mean_density(),
        n_mean_stderr,
        set,
        map,
        neel,
    })
}

/// Standard error of the mean; NaN below two samples.
fn stderr(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return f64::NAN;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Staggered shell averages `(-1)^m g2_m` for shells `1..=shells`.
fn staggered_series(observations: &[&Observation], shells: usize) -> Vec<Vec<f64>> {
    (1..=shells)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            observations
                .iter()
                .map(|o| sign * o.map.shell_average(m).unwrap_or(0.0))
                .collect()
        })
        .collect()
}

fn lightcone(plan: &DynamicsPlan, points: &[PointResult], threshold: f64) -> Result<(LightconeResult, LightconeResult)> {
    let shells = plan.analysis.lightcone_shells;
    let times: Vec<f64> = points.iter().map(|p| p.time).collect();
    let main: Vec<&Observation> = points.iter().map(|p| &p.main).collect();
    let reference: Vec<&Observation> = points.iter().map(|p| p.unitary.as_ref().unwrap_or(&p.main)).collect();
    let series = staggered_series(&main, shells);
    let norm = staggered_series(&reference, shells);
    Ok((
        lightcone_crossings(&times, &series, &norm, threshold)?,
        lightcone_crossings(&times, &norm, &norm, threshold)?,
    ))
}

#[derive(Serialize)]
struct ObservableSummary {
    n_mean: f64,
    n_mean_stderr: f64,
    s_neel: Option<f64>,
    s_neel_stderr: Option<f64>,
    xi: Option<f64>,
    xi_stderr: Option<f64>,
}

impl ObservableSummary {
    fn of(o: &Observation) -> Self {
        ObservableSummary {
            n_mean: o.n_mean,
            n_mean_stderr: o.n_mean_stderr,
            s_neel: o.neel.as_ref().map(|s| s.value),
            s_neel_stderr: o.neel.as_ref().map(|s| s.stderr),
            xi: o.xi.as_ref().map(|x| x.xi),
            xi_stderr: o.xi.as_ref().map(|x| x.stderr),
        }
    }

    fn of_shots(o: &ShotObservation) -> Self {
        ObservableSummary {
            n_mean: o.n_mean,
            n_mean_stderr: o.n_mean_stderr,
            s_neel: o.neel.as_ref().map(|s| s.value),
            s_neel_stderr: o.neel.as_ref().map(|s| s.stderr),
            xi: None,
            xi_stderr: None,
        }
    }
}

#[derive(Serialize)]
struct PointSummary {
    index: usize,
    scan_value: Option<f64>,
    x: Option<f64>,
    time_us: f64,
    t_tot_us: f64,
    #[serde(flatten)]
    observables: ObservableSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    unitary: Option<ObservableSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shots: Option<ObservableSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jumps_per_trajectory: Option<f64>,
}

#[derive(Serialize)]
struct Peak {
    index: usize,
    scan_value: Option<f64>,
    t_tot_us: f64,
    s_neel: f64,
}

#[derive(Serialize)]
struct LightconeSummary {
    threshold: f64,
    crossings_us: Vec<Option<f64>>,
    ordered: bool,
    unitary_crossings_us: Vec<Option<f64>>,
    unitary_ordered: bool,
}

#[derive(Serialize)]
struct DynamicsSummary {
    task: &'static str,
    method: Method,
    n_sites: usize,
    scan_parameter: Option<ScanParameter>,
    gamma_rad_per_us: Option<f64>,
    points: Vec<PointSummary>,
    peak_s_neel: Option<Peak>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lightcone: Option<LightconeSummary>,
}

impl DynamicsPlan {
    /// `x = hbar delta_final / U` of a detuning scan point.
    fn x_of(&self, value: Option<f64>) -> Option<f64> {
        match (self.parameter, value, self.u_scale) {
            (Some(ScanParameter::DeltaFinalMhz), Some(v), Some(u)) => Some(mhz_to_angular(v) / u),
            _ => None,
        }
    }
}

pub(crate) fn write(bundle: &mut Bundle, plan: &DynamicsPlan, result: &DynamicsResult) -> Result<serde_json::Value> {
    let has_unitary = plan.compare_unitary;
    let has_shots = plan.shots.is_some();
    let has_jumps = plan.method == Method::Mcwf;

    let mut header = vec!["index", "scan_value", "x", "time_us", "t_tot_us"];
    header.extend(["n_mean", "n_mean_stderr", "s_neel", "s_neel_stderr", "xi", "xi_stderr"]);
    if has_unitary {
        header.extend(["unitary_n_mean", "unitary_s_neel", "unitary_xi"]);
    }
    if has_shots {
        header.extend(["shots_n_mean", "shots_n_mean_stderr", "shots_s_neel", "shots_s_neel_stderr"]);
    }
    if has_jumps {
        header.push("jumps_per_trajectory");
    }
    let mut rows = Vec::new();
    for p in &result.points {
        let o = &p.main;
        let mut r = vec![
            p.index.to_string(),
            cell(p.scan_value),
            cell(plan.x_of(p.scan_value)),
            p.time.to_string(),
            p.t_tot.to_string(),
            o.n_mean.to_string(),
            o.n_mean_stderr.to_string(),
            cell(o.neel.as_ref().map(|s| s.value)),
            cell(o.neel.as_ref().map(|s| s.stderr)),
            cell(o.xi.as_ref().map(|x| x.xi)),
            cell(o.xi.as_ref().map(|x| x.stderr)),
        ];
        if let Some(u) = &p.unitary {
            r.extend([
                u.n_mean.to_string(),
                cell(u.neel.as_ref().map(|s| s.value)),
                cell(u.xi.as_ref().map(|x| x.xi)),
            ]);
        }
        if let Some(s) = &p.shots {
            r.extend([
                s.n_mean.to_string(),
                s.n_mean_stderr.to_string(),
                cell(s.neel.as_ref().map(|x| x.value)),
                cell(s.neel.as_ref().map(|x| x.stderr)),
            ]);
        }
        if has_jumps {
            r.push(cell(p.jumps_per_trajectory));
        }
        rows.push(r);
    }
    bundle.table("points.csv", &header, &rows)?;

    let mut header = vec!["index", "time_us", "m", "g2", "stderr"];
    if has_unitary {
        header.push("unitary_g2");
    }
    let mut rows = Vec::new();
    for p in &result.points {
        for m in p.main.map.shells() {
            let mut r = vec![
                p.index.to_string(),
                p.time.to_string(),
                m.to_string(),
                cell(p.main.map.shell_average(m)),
                cell(p.main.map.shell_average_stderr(m)),
            ];
            if let Some(u) = &p.unitary {
                r.push(cell(u.map.shell_average(m)));
            }
            rows.push(r);
        }
    }
    bundle.table("shells.csv", &header, &rows)?;

    let mut rows = Vec::new();
    for p in &result.points {
        for (i, site) in plan.geometry.sites().iter().enumerate() {
            rows.push(vec![
                p.index.to_string(),
                i.to_string(),
                site.k.to_string(),
                site.l.to_string(),
                p.main.densities[i].to_string(),
                p.main.density_stderr[i].to_string(),
            ]);
        }
    }
    bundle.table("densities.csv", &["index", "site", "k", "l", "density", "stderr"], &rows)?;

    for p in &result.points {
        let tag = format!("{:03}", p.index);
        if plan.analysis.maps {
            bundle.write_with(&format!("maps/g2_{tag}.csv"), |w| p.main.map.write_csv(w))?;
            if let Some(u) = &p.unitary {
                bundle.write_with(&format!("maps/g2_unitary_{tag}.csv"), |w| u.map.write_csv(w))?;
            }
            if let Some(s) = &p.shots {
                bundle.write_with(&format!("maps/g2_shots_{tag}.csv"), |w| s.map.write_csv(w))?;
            }
        }
        if plan.analysis.paths {
            write_paths(bundle, plan, &format!("maps/paths_{tag}.csv"), &p.main.map)?;
        }
        if plan.analysis.histograms {
            let partition = plan.geometry.neel_partition();
            let exact = sublattice_histogram_exact(plan.geometry.len(), &p.main.probabilities, &partition)?;
            bundle.write_with(&format!("histograms/exact_{tag}.csv"), |w| exact.write_csv(w))?;
            let baseline = baseline_histogram(p.main.n_mean.clamp(0.0, 1.0), &partition)?;
            bundle.write_with(&format!("histograms/baseline_{tag}.csv"), |w| baseline.write_csv(w))?;
            if let Some(s) = &p.shots {
                let measured = sublattice_histogram(&s.set, &partition)?;
                bundle.write_with(&format!("histograms/shots_{tag}.csv"), |w| measured.write_csv(w))?;
            }
        }
        if let (Some(s), Some(plan_shots)) = (&p.shots, &plan.shots) {
            if plan_shots.write_shots {
                bundle.write_with(&format!("shots/shots_{tag}.txt"), |w| {
                    s.set.write_text(w).map_err(|e| Error::io("shots", e))
                })?;
            }
        }
    }

    let lightcone = match &result.lightcone {
        Some((main, reference)) => {
            let shells = main.crossings.len();
            let rows: Vec<Vec<String>> = (0..shells)
                .map(|s| {
                    vec![
                        (s + 1).to_string(),
                        cell(main.crossings[s]),
                        cell(reference.crossings[s]),
                    ]
                })
                .collect();
            bundle.table("lightcone.csv", &["m", "crossing_us", "unitary_crossing_us"], &rows)?;
            let mut rows = Vec::new();
            for (t, p) in result.points.iter().enumerate() {
                for s in 0..shells {
                    rows.push(vec![
                        p.index.to_string(),
                        p.time.to_string(),
                        (s + 1).to_string(),
                        main.normalized[s][t].to_string(),
                        reference.normalized[s][t].to_string(),
                    ]);
                }
            }
            bundle.table(
                "lightcone_series.csv",
                &["index", "time_us", "m", "normalized", "unitary_normalized"],
                &rows,
            )?;
            Some(LightconeSummary {
                threshold: plan.analysis.lightcone_threshold.expect("set"),
                crossings_us: main.crossings.clone(),
                ordered: main.ordered,
                unitary_crossings_us: reference.crossings.clone(),
                unitary_ordered: reference.ordered,
            })
        }
        None => None,
    };

    let points: Vec<PointSummary> = result
        .points
        .iter()
        .map(|p| PointSummary {
            index: p.index,
            scan_value: p.scan_value,
            x: plan.x_of(p.scan_value),
            time_us: p.time,
            t_tot_us: p.t_tot,
            observables: ObservableSummary::of(&p.main),
            unitary: p.unitary.as_ref().map(ObservableSummary::of),
            shots: p.shots.as_ref().map(ObservableSummary::of_shots),
            jumps_per_trajectory: p.jumps_per_trajectory,
        })
        .collect();
    let peak_s_neel = result
        .points
        .iter()
        .filter_map(|p| p.main.neel.as_ref().map(|s| (p, s.value)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .filter(|_| result.points.len() > 1)
        .map(|(p, s)| Peak {
            index: p.index,
            scan_value: p.scan_value,
            t_tot_us: p.t_tot,
            s_neel: s,
        });
    let summary = DynamicsSummary {
        task: "dynamics",
        method: plan.method,
        n_sites: plan.geometry.len(),
        scan_parameter: plan.parameter,
        gamma_rad_per_us: plan.dephasing.map(|d| d.gamma),
        points,
        peak_s_neel,
        lightcone,
    };
    Ok(serde_json::to_value(summary)?)
}

/// Each class with its number of shortest linking paths, plus both
/// normalised to the largest value within the shell.
fn write_paths(bundle: &mut Bundle, plan: &DynamicsPlan, name: &str, map: &CorrelationMap) -> Result<()> {
    let kind = plan.geometry.kind();
    let mut rows = Vec::new();
    for m in map.shells() {
        let entries: Vec<_> = map.entries.iter().filter(|e| e.shell == m).collect();
        let paths: Vec<u64> = entries
            .iter()
            .map(|e| count_shortest_paths(kind, e.canonical.0, e.canonical.1))
            .collect();
        let max_paths = paths.iter().copied().max().unwrap_or(0).max(1) as f64;
        let max_g2 = entries.iter().map(|e| e.g2.abs()).fold(0.0, f64::max);
        for (e, &c) in entries.iter().zip(&paths) {
            rows.push(vec![
                e.canonical.0.to_string(),
                e.canonical.1.to_string(),
                m.to_string(),
                c.to_string(),
                e.g2.to_string(),
                e.stderr.to_string(),
                (c as f64 / max_paths).to_string(),
                if max_g2 > 0.0 { (e.g2.abs() / max_g2).to_string() } else { String::new() },
            ]);
        }
    }
    bundle.table(
        name,
        &["k", "l", "m", "paths", "g2", "stderr", "paths_relative", "g2_relative"],
        &rows,
    )
}
