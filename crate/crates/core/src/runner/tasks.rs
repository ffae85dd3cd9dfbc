//! Pipelines that need no ramp evolution: the classical staircase, the
//! short-time scaling check and the small-system spectrum.

use num_rational::Rational64;
use serde::Serialize;

use super::config::{linspace, ClassicalBlock, ExperimentConfig, ShorttimeBlock, SpectrumBlock};
use super::output::{Bundle, Seeds};
use super::{build_geometry, in_block};
use crate::classical::{
    classical_density_curve, classical_ground_states, classical_mixture_g2, classical_spectrum, rational_to_f64,
    to_rational, ClassicalCouplings, ClassicalGroundSet, ClassicalMethod, CurvePoint, ListingOptions, PhaseDiagram,
};
use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, Symmetrization};
use crate::measure::CorrelationMap;
use crate::operator::{build_couplings, spectrum_at, CouplingMap, CouplingParams, CouplingSpec, RydbergModel};
use crate::schedule::build_ramp;
use crate::shorttime::{average_hamiltonian, verify_scaling, AveragedDrive, ScalingReport, MAX_SHELL};
use crate::units::mhz_to_angular;

fn block<'a, T>(value: &'a Option<T>, name: &str, task: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::invalid(name, format!("the {task} task needs a {name} block")))
}

fn resolve_couplings(params: &CouplingParams, geometry: &LatticeGeometry) -> Result<CouplingSpec> {
    params.resolve(geometry.spacing_um()).map_err(|e| in_block("couplings", e))
}

// ---------------------------------------------------------------- classical

pub(crate) struct ClassicalPlan {
    geometry: LatticeGeometry,
    couplings: ClassicalCouplings,
    grid: Vec<f64>,
    ground_at: Vec<(f64, Rational64)>,
    listing: ListingOptions,
    pub(crate) seeds: Seeds,
}

pub(crate) fn plan_classical(config: &ExperimentConfig) -> Result<ClassicalPlan> {
    let geometry = build_geometry(&config.geometry)?;
    let spec = resolve_couplings(&config.couplings, &geometry)?;
    let couplings = ClassicalCouplings::from_spec(spec).map_err(|e| in_block("couplings", e))?;
    let c: &ClassicalBlock = block(&config.classical, "classical", "classical")?;
    if !(c.x_min < c.x_max) {
        return Err(Error::invalid("classical.x_max", "must exceed x_min"));
    }
    if c.x_points < 2 {
        return Err(Error::invalid("classical.x_points", "need at least two points"));
    }
    let grid = linspace("classical", c.x_min, c.x_max, c.x_points)?;
    let ground_at = c
        .ground_at
        .iter()
        .map(|&x| Ok((x, to_rational(x).map_err(|e| in_block("classical.ground_at", e))?)))
        .collect::<Result<Vec<_>>>()?;
    if c.listing_cap == 0 {
        return Err(Error::invalid("classical.listing_cap", "must be positive"));
    }
    let mut seeds = Seeds {
        base: config.seed,
        ..Seeds::default()
    };
    let sample_seed = c.sample_large.then_some(config.seed);
    seeds.classical_sampling = sample_seed;
    Ok(ClassicalPlan {
        geometry,
        couplings,
        grid,
        ground_at,
        listing: ListingOptions {
            cap: c.listing_cap,
            sample_seed,
        },
        seeds,
    })
}

pub(crate) struct ClassicalResult {
    method: ClassicalMethod,
    diagram: PhaseDiagram,
    curve: Vec<CurvePoint>,
    ground: Vec<(f64, ClassicalGroundSet, CorrelationMap)>,
}

pub(crate) fn execute_classical(plan: &ClassicalPlan) -> Result<ClassicalResult> {
    let spectrum = classical_spectrum(&plan.geometry, plan.couplings)?;
    let diagram = spectrum.phase_diagram();
    let curve = classical_density_curve(&plan.geometry, plan.couplings, &plan.grid)?;
    let sym = Symmetrization::default_for(plan.geometry.kind());
    let max_shell = max_shell_of(&plan.geometry);
    let ground = plan
        .ground_at
        .iter()
        .map(|&(xf, x)| {
            let set = classical_ground_states(&plan.geometry, plan.couplings, x, plan.listing)?;
            let map = classical_mixture_g2(&set, &plan.geometry, max_shell, sym)?;
            Ok((xf, set, map))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassicalResult {
        method: spectrum.method(),
        diagram,
        curve,
        ground,
    })
}

/// Largest shell that still has site pairs, capped at 4.
fn max_shell_of(geometry: &LatticeGeometry) -> usize {
    let n = geometry.len();
    let mut best = 1;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max(geometry.shell(i, j));
        }
    }
    best.min(4)
}

#[derive(Serialize)]
struct GroundSummary {
    x: f64,
    energy_over_u: String,
    degeneracy: String,
    density: String,
    listed: usize,
    sampled: bool,
    file: String,
}

#[derive(Serialize)]
struct ClassicalSummary<'a> {
    task: &'static str,
    n_sites: usize,
    method: ClassicalMethod,
    couplings: [String; 2],
    plateau_count: usize,
    diagram: &'a PhaseDiagram,
    ground: Vec<GroundSummary>,
}

pub(crate) fn write_classical(bundle: &mut Bundle, plan: &ClassicalPlan, result: &ClassicalResult) -> Result<serde_json::Value> {
    bundle.write_with("plateaus.csv", |w| result.diagram.write_csv(w))?;
    let rows: Vec<Vec<String>> = result
        .diagram
        .boundaries
        .iter()
        .map(|b| {
            vec![
                b.x.to_string(),
                rational_to_f64(b.x).to_string(),
                b.degeneracy.to_string(),
                b.density_below.to_string(),
                b.density_above.to_string(),
            ]
        })
        .collect();
    bundle.table(
        "boundaries.csv",
        &["x", "x_float", "degeneracy", "density_below", "density_above"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = result
        .curve
        .iter()
        .map(|p| {
            vec![
                p.x.to_string(),
                p.density.to_string(),
                p.degeneracy.to_string(),
                p.density_below.to_string(),
                p.density_above.to_string(),
            ]
        })
        .collect();
    bundle.table(
        "curve.csv",
        &["x", "density", "degeneracy", "density_below", "density_above"],
        &rows,
    )?;
    let mut ground = Vec::new();
    for (i, (xf, set, map)) in result.ground.iter().enumerate() {
        let file = format!("ground/ground_{i:02}.txt");
        bundle.write_with(&file, |w| set.write_bitstrings(w))?;
        bundle.write_with(&format!("ground/g2_{i:02}.csv"), |w| map.write_csv(w))?;
        ground.push(GroundSummary {
            x: *xf,
            energy_over_u: set.level.energy.to_string(),
            degeneracy: set.degeneracy().to_string(),
            density: set.level.density.to_string(),
            listed: set.configurations.len(),
            sampled: set.sampled,
            file,
        });
    }
    let summary = ClassicalSummary {
        task: "classical",
        n_sites: plan.geometry.len(),
        method: result.method,
        couplings: [plan.couplings.horizontal.to_string(), plan.couplings.vertical.to_string()],
        plateau_count: result.diagram.plateaus.len(),
        diagram: &result.diagram,
        ground,
    };
    Ok(serde_json::to_value(summary)?)
}

// ---------------------------------------------------------------- shorttime

pub(crate) struct ShorttimePlan {
    geometry: LatticeGeometry,
    couplings: CouplingMap,
    drive: AveragedDrive,
    orders: Vec<(usize, Vec<f64>)>,
    pub(crate) seeds: Seeds,
}

pub(crate) fn plan_shorttime(config: &ExperimentConfig) -> Result<ShorttimePlan> {
    let geometry = build_geometry(&config.geometry)?;
    let spec = resolve_couplings(&config.couplings, &geometry)?;
    if !matches!(spec, CouplingSpec::Nn { .. }) {
        return Err(Error::invalid(
            "couplings.mode",
            "the leading-order expressions assume nearest-neighbour couplings",
        ));
    }
    let couplings = build_couplings(&geometry, spec).map_err(|e| in_block("couplings", e))?;
    RydbergModel::new(couplings.clone()).map_err(|e| in_block("geometry", e))?;
    let s: &ShorttimeBlock = block(&config.shorttime, "shorttime", "shorttime")?;
    let drive = match (s.omega_mhz, s.delta_avg_mhz, &config.schedule) {
        (Some(o), Some(d), _) => {
            if !(o.is_finite() && d.is_finite()) {
                return Err(Error::invalid("shorttime.omega_mhz", "must be finite"));
            }
            AveragedDrive {
                omega: mhz_to_angular(o),
                delta_avg: mhz_to_angular(d),
                duration: 0.0,
            }
        }
        (None, None, Some(params)) => {
            let schedule = build_ramp(params).map_err(|e| in_block("schedule", e))?;
            average_hamiltonian(&schedule).map_err(|e| in_block("schedule", e))?
        }
        _ => {
            return Err(Error::invalid(
                "shorttime.omega_mhz",
                "give both omega_mhz and delta_avg_mhz, or neither together with a sweep-only schedule",
            ))
        }
    };
    if s.orders.is_empty() {
        return Err(Error::invalid("shorttime.orders", "no orders requested"));
    }
    let mut orders = Vec::new();
    for (i, o) in s.orders.iter().enumerate() {
        if !(1..=MAX_SHELL).contains(&o.m) {
            return Err(Error::invalid(
                format!("shorttime.orders[{i}].m"),
                format!("must lie in 1..={MAX_SHELL}"),
            ));
        }
        if o.t_grid.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
            return Err(Error::invalid(format!("shorttime.orders[{i}].t_grid"), "durations must be positive"));
        }
        if o.t_grid.len() < crate::shorttime::MIN_FIT_POINTS {
            return Err(Error::invalid(
                format!("shorttime.orders[{i}].t_grid"),
                format!("need at least {} durations", crate::shorttime::MIN_FIT_POINTS),
            ));
        }
        orders.push((o.m, o.t_grid.clone()));
    }
    Ok(ShorttimePlan {
        geometry,
        couplings,
        drive,
        orders,
        seeds: Seeds {
            base: config.seed,
            ..Seeds::default()
        },
    })
}

pub(crate) fn execute_shorttime(plan: &ShorttimePlan) -> Result<Vec<ScalingReport>> {
    plan.orders
        .iter()
        .map(|(m, grid)| verify_scaling(&plan.geometry, &plan.couplings, &plan.drive, *m, grid))
        .collect()
}

#[derive(Serialize)]
struct ClassSummary {
    m: usize,
    k: i64,
    l: i64,
    paths: u64,
    exponent: f64,
    expected_exponent: i32,
    coefficient_ratio: f64,
    usable_points: usize,
}

pub(crate) fn write_shorttime(bundle: &mut Bundle, plan: &ShorttimePlan, reports: &[ScalingReport]) -> Result<serde_json::Value> {
    bundle.write_with("scaling.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["m", "k", "l", "T", "g2_measured", "g2_predicted", "ratio"])?;
        for r in reports {
            for class in &r.classes {
                for row in &class.rows {
                    c.write_record([
                        row.m.to_string(),
                        row.k.to_string(),
                        row.l.to_string(),
                        format!("{:e}", row.t),
                        format!("{:e}", row.g2_measured),
                        format!("{:e}", row.g2_predicted),
                        row.ratio.to_string(),
                    ])?;
                }
            }
        }
        c.flush().map_err(|e| Error::io("scaling.csv", e))
    })?;
    let classes: Vec<ClassSummary> = reports
        .iter()
        .flat_map(|r| {
            r.classes.iter().map(move |c| ClassSummary {
                m: r.m,
                k: c.k,
                l: c.l,
                paths: c.paths,
                exponent: c.exponent,
                expected_exponent: c.expected_exponent,
                coefficient_ratio: c.coefficient_ratio,
                usable_points: c.usable_points,
            })
        })
        .collect();
    Ok(serde_json::json!({
        "task": "shorttime",
        "n_sites": plan.geometry.len(),
        "omega_rad_per_us": plan.drive.omega,
        "delta_avg_rad_per_us": plan.drive.delta_avg,
        "classes": classes,
    }))
}

// ---------------------------------------------------------------- spectrum

pub(crate) struct SpectrumPlan {
    geometry: LatticeGeometry,
    models: Vec<(&'static str, RydbergModel)>,
    u: f64,
    omega: f64,
    deltas: Vec<f64>,
    n_levels: usize,
    pub(crate) seeds: Seeds,
}

pub(crate) fn plan_spectrum(config: &ExperimentConfig) -> Result<SpectrumPlan> {
    let geometry = build_geometry(&config.geometry)?;
    let spec = resolve_couplings(&config.couplings, &geometry)?;
    let u = config
        .couplings
        .nn_scale(geometry.spacing_um())
        .ok_or_else(|| Error::invalid("couplings", "the spectrum task needs a coupling scale"))?;
    let s: &SpectrumBlock = block(&config.spectrum, "spectrum", "spectrum")?;
    if !(s.omega_over_u.is_finite() && s.omega_over_u >= 0.0) {
        return Err(Error::invalid("spectrum.omega_over_u", "must be finite and non-negative"));
    }
    let deltas = linspace("spectrum", s.delta_over_u_start, s.delta_over_u_stop, s.count)?;
    let couplings = build_couplings(&geometry, spec).map_err(|e| in_block("couplings", e))?;
    let dim = 1usize << geometry.len().min(63);
    if s.n_levels == 0 || s.n_levels > dim {
        return Err(Error::invalid("spectrum.n_levels", format!("must lie in 1..={dim}")));
    }
    let mut models = vec![("repulsive", RydbergModel::new(couplings.clone()).map_err(|e| in_block("geometry", e))?)];
    if s.both_signs {
        let flipped: Vec<(usize, usize, f64)> = couplings.entries().iter().map(|&(i, j, v)| (i, j, -v)).collect();
        let attractive = CouplingMap::from_entries(geometry.len(), &flipped)?;
        models.push(("attractive", RydbergModel::new(attractive)?));
    }
    Ok(SpectrumPlan {
        geometry,
        models,
        u: u.abs(),
        omega: s.omega_over_u * u.abs(),
        deltas,
        n_levels: s.n_levels,
        seeds: Seeds {
            base: config.seed,
            ..Seeds::default()
        },
    })
}

pub(crate) struct SpectrumRow {
    sign: &'static str,
    delta_over_u: f64,
    energies: Vec<f64>,
}

pub(crate) fn execute_spectrum(plan: &SpectrumPlan) -> Result<Vec<SpectrumRow>> {
    let mut rows = Vec::new();
    for (sign, model) in &plan.models {
        for &d in &plan.deltas {
            let s = spectrum_at(model, plan.omega, d * plan.u, plan.n_levels, false)?;
            rows.push(SpectrumRow {
                sign,
                delta_over_u: d,
                energies: s.values.iter().map(|e| e / plan.u).collect(),
            });
        }
    }
    Ok(rows)
}

pub(crate) fn write_spectrum(bundle: &mut Bundle, plan: &SpectrumPlan, rows: &[SpectrumRow]) -> Result<serde_json::Value> {
    let mut table = Vec::new();
    for r in rows {
        for (level, e) in r.energies.iter().enumerate() {
            table.push(vec![
                r.sign.to_string(),
                r.delta_over_u.to_string(),
                level.to_string(),
                e.to_string(),
            ]);
        }
    }
    bundle.table("spectrum.csv", &["couplings", "delta_over_u", "level", "energy_over_u"], &table)?;
    let gaps: Vec<serde_json::Value> = plan
        .models
        .iter()
        .map(|(sign, _)| {
            let min_gap = rows
                .iter()
                .filter(|r| r.sign == *sign && r.energies.len() > 1)
                .map(|r| (r.delta_over_u, r.energies[1] - r.energies[0]))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            serde_json::json!({
                "couplings": sign,
                "min_gap_over_u": min_gap.map(|g| g.1),
                "min_gap_at_delta_over_u": min_gap.map(|g| g.0),
            })
        })
        .collect();
    Ok(serde_json::json!({
        "task": "spectrum",
        "n_sites": plan.geometry.len(),
        "omega_over_u": plan.omega / plan.u,
        "n_levels": plan.n_levels,
        "gaps": gaps,
    }))
}
