//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Pass substrings as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- AC3 AC6`.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::Rational64;
use rydsim::classical::{classical_spectrum, classical_spectrum_enumerated, ClassicalCouplings, ClassicalMethod};
use rydsim::lattice::{build_lattice, count_shortest_paths, Boundary, LatticeGeometry, LatticeKind, Symmetrization};
use rydsim::measure::{
    g2_connected, lightcone_crossings, neel_structure_factor, sample_shots, CorrelationMap, CorrelationSource,
    DetectionErrors, Moments, ShotSource,
};
use rydsim::openquantum::{evolve_master_direct, evolve_mcwf, DensityOperator, DephasingModel, MasterConfig, McwfConfig, Unraveling};
use rydsim::operator::{build_couplings, CouplingSpec, RydbergModel};
use rydsim::propagate::{check_convergence, evolve_unitary, piecewise_segments, EvolutionConfig, QuantumState, TimeGrid};
use rydsim::schedule::{build_ramp, RampParams, RampSchedule};
use rydsim::shorttime::{short_time_maps, verify_scaling, AveragedDrive};
use rydsim::Complex64;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion { id: "AC1", title: "MCWF vs Lindblad on a 3-site chain", budget: mins(2), run: ac1 },
        Criterion { id: "AC2", title: "Krylov vs dense exponential on an 8-site chain", budget: mins(1), run: ac2 },
        Criterion { id: "AC3", title: "short-time power law", budget: mins(5), run: ac3 },
        Criterion { id: "AC4", title: "path embedding", budget: mins(2), run: ac4 },
        Criterion { id: "AC5", title: "classical phase diagram", budget: mins(2), run: ac5 },
        Criterion { id: "AC6", title: "correlator identities", budget: Duration::from_secs(10), run: ac6 },
        Criterion { id: "AC7", title: "light-cone ordering", budget: mins(10), run: ac7 },
        Criterion { id: "AC8", title: "dephasing maximum of S_Neel vs t_tot", budget: mins(30), run: ac8 },
        Criterion { id: "AC9", title: "step convergence and vdW tail", budget: mins(15), run: ac9 },
        Criterion { id: "AC10", title: "measurement model", budget: mins(1), run: ac10 },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.id.eq_ignore_ascii_case(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = elapsed <= c.budget;
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        let timing = if in_time {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s, over the {}s budget", elapsed.as_secs_f64(), c.budget.as_secs())
        };
        println!(
            "{} {}: {} ({timing}) {detail}",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.title
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn square(w: usize, h: usize) -> LatticeGeometry {
    build_lattice(LatticeKind::Square, &[w, h], Boundary::Open, 1.0, 1.0).unwrap()
}

fn chain(n: usize) -> LatticeGeometry {
    build_lattice(LatticeKind::Chain, &[n], Boundary::Open, 1.0, 1.0).unwrap()
}

fn nn_model(g: &LatticeGeometry, u_mhz: f64) -> RydbergModel {
    RydbergModel::new(build_couplings(g, CouplingSpec::isotropic_nn(TAU * u_mhz)).unwrap()).unwrap()
}

fn exact_map(state: &QuantumState, g: &LatticeGeometry, max_shell: usize) -> CorrelationMap {
    let m = Moments::from_state(state);
    g2_connected(CorrelationSource::Exact(&m), g, max_shell, Symmetrization::default_for(g.kind())).unwrap()
}

fn final_state(psi: &QuantumState, s: &RampSchedule, m: &RydbergModel, cfg: &EvolutionConfig) -> QuantumState {
    evolve_unitary(psi, s, m, cfg).unwrap().pop().unwrap().state
}

/// MCWF with 1280 trajectories against direct Lindblad integration, both
/// unravelings, densities and the nearest-neighbour correlator.
fn ac1() -> Check {
    let g = chain(3);
    let u = 2.7;
    let model = nn_model(&g, u);
    let schedule = build_ramp(&RampParams::time_trace())?;
    let dephasing = DephasingModel::from_ratio(1.2, TAU * u)?;
    let psi = QuantumState::all_down(3)?;
    let rho = evolve_master_direct(&DensityOperator::pure(&psi)?, &schedule, &model, dephasing, &MasterConfig::default())?;
    let exact = Moments::from_probabilities(3, &rho.last().unwrap().probabilities())?;
    let exact_map = g2_connected(CorrelationSource::Exact(&exact), &g, 1, Symmetrization::Quadrants)?;
    let g2_exact = exact_map.get(1, 0).unwrap().g2;

    let mut ok = true;
    let mut detail = String::new();
    for (seed, unraveling) in [(11, Unraveling::Projector), (12, Unraveling::PhaseFlip)] {
        let mut cfg = McwfConfig::new(1280, seed, EvolutionConfig::default());
        cfg.unraveling = unraveling;
        let ens = evolve_mcwf(&psi, &schedule, &model, dephasing, &cfg)?;
        let last = ens.last();
        let mean = last.moments();
        let se = last.density_stderr();
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            let z = (mean.density()[i] - exact.density()[i]).abs() / se[i];
            worst = worst.max(z);
        }
        let map = last.correlations(&g, 1)?;
        let e = map.get(1, 0).unwrap();
        let z_g2 = (e.g2 - g2_exact).abs() / e.stderr;
        worst = worst.max(z_g2);
        ok &= worst < 3.0;
        detail += &format!(
            "[{unraveling:?}: worst deviation {worst:.2} se, g2 {:.4}+-{:.4} vs {g2_exact:.4}] ",
            e.g2, e.stderr
        );
    }
    Ok((ok, detail))
}

/// Independent oracle: exponentiate each constant-drive interval through a
/// dense symmetric eigendecomposition.
fn ac2() -> Check {
    let g = chain(8);
    let model = nn_model(&g, 2.7);
    let schedule = build_ramp(&RampParams::time_trace())?;
    let psi = QuantumState::all_down(8)?;
    let krylov = final_state(&psi, &schedule, &model, &EvolutionConfig::default());

    let (segments, _) = piecewise_segments(&schedule, 200, TimeGrid::default(), &[])?;
    let mut v: DVector<Complex64> = DVector::from_column_slice(psi.amplitudes());
    for seg in &segments {
        let h = model.at(seg.drive).to_dense_real();
        let eig = SymmetricEigen::new(h);
        let basis: DMatrix<Complex64> = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
        let phases = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, -e * seg.duration())),
        );
        let coeffs = basis.adjoint() * &v;
        v = &basis * coeffs.component_mul(&phases);
    }
    let dense = QuantumState::from_amplitudes(8, v.iter().copied().collect())?;
    let distance = krylov.distance(&dense);
    let drift = (krylov.norm() - 1.0).abs();
    Ok((
        distance < 1e-8 && drift < 1e-9,
        format!("distance {distance:.2e}, norm drift {drift:.2e}"),
    ))
}

fn ac3() -> Check {
    let g = chain(6);
    let u = TAU * 2.7;
    let couplings = build_couplings(&g, CouplingSpec::isotropic_nn(u))?;
    let drive = AveragedDrive { omega: TAU * 1.8, delta_avg: TAU * -0.75, duration: 1.0 };
    let grids: [(usize, &[f64], f64); 2] = [
        (1, &[0.002, 0.003, 0.004, 0.006, 0.008, 0.012], 0.05),
        (2, &[0.006, 0.008, 0.011, 0.015, 0.02], 0.2),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (m, grid, tol) in grids {
        let report = verify_scaling(&g, &couplings, &drive, m, grid)?;
        let class = report.class(m as i64, 0).ok_or("missing class")?;
        let expected = (2 + 4 * m) as f64;
        let pass = (class.exponent - expected).abs() <= tol && (class.coefficient_ratio - 1.0).abs() <= 0.05;
        ok &= pass;
        detail += &format!(
            "[m={m}: exponent {:.4} (want {expected}+-{tol}), ratio {:.4}] ",
            class.exponent, class.coefficient_ratio
        );
    }
    Ok((ok, detail))
}

/// Path counts against breadth-first dynamic programming on the infinite
/// lattice, then the (1,1):(2,0) ratio of exact short-time correlators.
fn ac4() -> Check {
    let mut mismatches = 0;
    let mut checked = 0;
    for kind in [LatticeKind::Square, LatticeKind::Triangular] {
        let (dist, count) = bfs_paths(kind.bond_directions(), 5);
        for (&(k, l), &d) in &dist {
            if d == 0 {
                continue;
            }
            checked += 1;
            if count_shortest_paths(kind, k, l) != count[&(k, l)] || kind.distance(k, l) != Some(d) {
                mismatches += 1;
            }
        }
    }

    let g = square(4, 4);
    let couplings = build_couplings(&g, CouplingSpec::isotropic_nn(TAU * 2.7))?;
    let drive = AveragedDrive { omega: TAU * 1.8, delta_avg: TAU * -0.75, duration: 1.0 };
    let grid = [0.04, 0.03, 0.02, 0.015];
    let maps = short_time_maps(&g, &couplings, &drive, 2, &grid)?;
    let ratios: Vec<f64> = maps
        .iter()
        .map(|m| m.get(1, 1).unwrap().g2 / m.get(2, 0).unwrap().g2)
        .collect();
    let errors: Vec<f64> = ratios.iter().map(|r| (r - 2.0).abs()).collect();
    let approaching = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = *errors.last().unwrap();
    Ok((
        mismatches == 0 && approaching && last < 0.02,
        format!(
            "{checked} displacements, {mismatches} mismatches; (1,1):(2,0) ratio at T={grid:?} us: {}",
            ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

fn bfs_paths(dirs: &[(i64, i64)], max_d: usize) -> (HashMap<(i64, i64), usize>, HashMap<(i64, i64), u64>) {
    let mut dist = HashMap::from([((0, 0), 0usize)]);
    let mut count = HashMap::from([((0, 0), 1u64)]);
    let mut frontier = vec![(0i64, 0i64)];
    for d in 1..=max_d {
        let mut next: Vec<(i64, i64)> = Vec::new();
        for &(k, l) in &frontier {
            for &(dk, dl) in dirs {
                let p = (k + dk, l + dl);
                match dist.get(&p) {
                    None => {
                        dist.insert(p, d);
                        count.insert(p, count[&(k, l)]);
                        next.push(p);
                    }
                    Some(&dp) if dp == d => *count.get_mut(&p).unwrap() += count[&(k, l)],
                    _ => {}
                }
            }
        }
        frontier = next;
    }
    (dist, count)
}

fn ac5() -> Check {
    let iso = ClassicalCouplings::isotropic();
    let r = Rational64::from_integer;
    let sq_periodic = classical_spectrum(
        &build_lattice(LatticeKind::Square, &[6, 6], Boundary::Periodic, 1.0, 1.0)?,
        iso,
    )?
    .phase_diagram();
    let densities: Vec<Rational64> = sq_periodic.plateaus.iter().map(|p| p.density).collect();
    let bounds: Vec<Rational64> = sq_periodic.boundaries.iter().map(|b| b.x).collect();
    let square_ok = densities == [r(0), Rational64::new(1, 2), r(1)] && bounds == [r(0), r(4)];

    let tri = classical_spectrum(
        &build_lattice(LatticeKind::Triangular, &[6, 6], Boundary::Periodic, 1.0, 1.0)?,
        iso,
    )?
    .phase_diagram();
    let has = |n: Rational64, lo: i64, hi: i64| {
        tri.plateaus
            .iter()
            .any(|p| p.density == n && p.x_lo == Some(r(lo)) && p.x_hi == Some(r(hi)))
    };
    let tri_ok = has(Rational64::new(1, 3), 0, 3) && has(Rational64::new(2, 3), 3, 6);

    let sq_open = classical_spectrum(&square(6, 6), iso)?.phase_diagram();
    let open_count = sq_open.plateaus_within(r(0), r(4));
    let periodic_count = sq_periodic.plateaus_within(r(0), r(4));
    let open_ok = open_count > periodic_count;

    let (dp_checked, dp_mismatch) = dp_vs_brute_force()?;
    Ok((
        square_ok && tri_ok && open_ok && dp_mismatch == 0 && dp_checked > 0,
        format!(
            "square periodic densities {:?} boundaries {:?}; triangular 1/3 and 2/3 plateaus {}; plateaus on (0,4): open {open_count} vs periodic {periodic_count}; DP vs brute force on {dp_checked} geometries, {dp_mismatch} mismatches",
            densities.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            bounds.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            if tri_ok { "found" } else { "missing" },
        ),
    ))
}

/// Every transfer-solvable geometry with at most 16 sites, with isotropic
/// and anisotropic couplings.
fn dp_vs_brute_force() -> Result<(usize, usize), Box<dyn std::error::Error>> {
    let couplings = [ClassicalCouplings::isotropic(), ClassicalCouplings::new(Rational64::new(1, 3), Rational64::from_integer(1))?];
    let mut shapes: Vec<(LatticeKind, Vec<usize>)> = (1..=16).map(|n| (LatticeKind::Chain, vec![n])).collect();
    for w in 1..=16usize {
        for h in 1..=16 / w {
            shapes.push((LatticeKind::Square, vec![w, h]));
            shapes.push((LatticeKind::Triangular, vec![w, h]));
        }
    }
    let (mut checked, mut mismatches) = (0, 0);
    for (kind, dims) in shapes {
        for boundary in [Boundary::Open, Boundary::Periodic] {
            let Ok(g) = build_lattice(kind, &dims, boundary, 1.0, 1.0) else {
                continue;
            };
            for c in couplings {
                let dp = classical_spectrum(&g, c)?;
                if dp.method() != ClassicalMethod::Transfer {
                    continue;
                }
                let brute = classical_spectrum_enumerated(&g, c)?;
                checked += 1;
                if (0..=g.len()).any(|k| dp.level(k) != brute.level(k)) {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((checked, mismatches))
}

fn neel_bits(g: &LatticeGeometry, parity: i64) -> u64 {
    g.sites()
        .iter()
        .filter(|s| (s.k + s.l).rem_euclid(2) == parity)
        .fold(0, |acc, s| acc | 1 << s.index)
}

fn ac6() -> Check {
    let g = square(4, 4);
    let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut v = vec![Complex64::new(0.0, 0.0); 1 << 16];
    v[neel_bits(&g, 0) as usize] = amp;
    v[neel_bits(&g, 1) as usize] = amp;
    let map = exact_map(&QuantumState::from_amplitudes(16, v)?, &g, 6);
    let even_err = map
        .entries
        .iter()
        .map(|e| (e.g2 - if e.shell % 2 == 0 { 0.25 } else { -0.25 }).abs())
        .fold(0.0, f64::max);

    let g5 = square(5, 5);
    let single = Moments::from_configurations(25, &[neel_bits(&g5, 0)])?;
    let map5 = g2_connected(CorrelationSource::Exact(&single), &g5, 8, Symmetrization::Quadrants)?;
    let odd_err = map5.entries.iter().map(|e| e.g2.abs()).fold(0.0, f64::max);
    let staggered = single
        .density()
        .iter()
        .zip(g5.sites())
        .all(|(n, s)| *n == if (s.k + s.l) % 2 == 0 { 1.0 } else { 0.0 });

    let g6 = square(6, 6);
    let ideal = Moments::from_configurations(36, &[neel_bits(&g6, 0), neel_bits(&g6, 1)])?;
    let s = neel_structure_factor(
        &g2_connected(CorrelationSource::Exact(&ideal), &g6, 4, Symmetrization::Quadrants)?,
        4,
    )?
    .value;
    Ok((
        even_err < 1e-12 && odd_err < 1e-12 && staggered && (s - 40.0).abs() < 1e-9,
        format!(
            "even-L max |g2 - (-1)^m/4| = {even_err:.1e} over {} classes; odd-L max |g2| = {odd_err:.1e}, staggered densities {staggered}; ideal S_Neel = {s}",
            map.entries.len()
        ),
    ))
}

fn staggered_shells(map: &CorrelationMap, shells: usize) -> Vec<f64> {
    (1..=shells)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * map.shell_average(m).unwrap()
        })
        .collect()
}

fn ac7() -> Check {
    let g = square(4, 4);
    let model = nn_model(&g, 2.7);
    let schedule = build_ramp(&RampParams::time_trace())?;
    let times: Vec<f64> = (0..=47).map(|i| 0.02 * i as f64).collect();
    let cfg = EvolutionConfig::default().with_snapshots(&times);
    let snaps = evolve_unitary(&QuantumState::all_down(16)?, &schedule, &model, &cfg)?;
    let mut series = vec![Vec::new(); 3];
    let mut t_axis = Vec::new();
    for s in &snaps {
        if !times.iter().any(|t| (t - s.time).abs() < 1e-9) {
            continue;
        }
        t_axis.push(s.time);
        for (m, v) in staggered_shells(&exact_map(&s.state, &g, 3), 3).into_iter().enumerate() {
            series[m].push(v);
        }
    }
    let result = lightcone_crossings(&t_axis, &series, &series, 0.2)?;
    let reference = [0.64, 0.71, 0.79];
    let within = result
        .crossings
        .iter()
        .zip(reference)
        .all(|(c, r)| c.is_some_and(|c| (c - r).abs() <= 0.15));
    let shown: Vec<String> = result
        .crossings
        .iter()
        .map(|c| c.map_or("none".into(), |c| format!("{c:.3}")))
        .collect();
    Ok((
        result.ordered,
        format!(
            "crossings {} us; soft band +-0.15 us around 0.64/0.71/0.79: {}",
            shown.join("/"),
            if within { "inside" } else { "outside (logged only)" }
        ),
    ))
}

fn ac8() -> Check {
    // Full van der Waals couplings, as in the simulations this criterion
    // is taken from.
    let g = square(4, 4);
    let u = TAU * 2.7;
    let model = RydbergModel::new(build_couplings(&g, CouplingSpec::vdw_from_nn(u, 1.0))?)?;
    let dephasing = DephasingModel::from_ratio(1.2, u)?;
    let psi = QuantumState::all_down(16)?;
    let mut rows = Vec::new();
    for i in 0..7 {
        let t_sweep = 0.1 + 0.2 * i as f64;
        let schedule = build_ramp(&RampParams::duration_scan(t_sweep))?;
        let unitary = neel_structure_factor(
            &exact_map(&final_state(&psi, &schedule, &model, &EvolutionConfig::default()), &g, 4),
            4,
        )?
        .value;
        let mut cfg = McwfConfig::new(24, 100 + i as u64, EvolutionConfig::default());
        cfg.unraveling = Unraveling::PhaseFlip;
        let ens = evolve_mcwf(&psi, &schedule, &model, dephasing, &cfg)?;
        let noisy = neel_structure_factor(&ens.last().correlations(&g, 4)?, 4)?;
        rows.push((schedule.total_duration(), unitary, noisy));
    }
    let (peak_idx, peak) = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .2.value.total_cmp(&b.1 .2.value))
        .map(|(i, r)| (i, r.2.value))
        .unwrap();
    let t_peak = rows[peak_idx].0;
    let end = rows.last().unwrap().2.value;
    let unitary_monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    let ok = (0.7..=1.5).contains(&t_peak) && end <= 0.9 * peak && unitary_monotone;
    let table: Vec<String> = rows
        .iter()
        .map(|(t, su, sd)| format!("{t:.1}:{sd_v:.3}+-{sd_e:.3}/{su:.2}", sd_v = sd.value, sd_e = sd.stderr))
        .collect();
    Ok((
        ok,
        format!(
            "peak {peak:.3} at t_tot {t_peak:.1} us, {end:.3} at 1.8 us ({:.0}% drop), unitary non-decreasing {unitary_monotone}; t_tot:S_deph/S_unitary {}",
            100.0 * (1.0 - end / peak),
            table.join(" ")
        ),
    ))
}

fn ac9() -> Check {
    let g = square(4, 4);
    let schedule = build_ramp(&RampParams::time_trace())?;
    let psi = QuantumState::all_down(16)?;
    let nn = nn_model(&g, 2.7);
    let report = check_convergence(&psi, &schedule, &nn, &g, &EvolutionConfig::with_steps(400))?;

    let vdw = RydbergModel::new(build_couplings(&g, CouplingSpec::vdw_from_nn(TAU * 2.7, 1.0))?)?;
    let cfg = EvolutionConfig::default();
    let a = final_state(&psi, &schedule, &nn, &cfg);
    let b = final_state(&psi, &schedule, &vdw, &cfg);
    let (na, nb) = (a.site_densities(), b.site_densities());
    let mean_diff = (na.iter().sum::<f64>() - nb.iter().sum::<f64>()).abs() / na.len() as f64;
    let site_diff = na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (ma, mb) = (exact_map(&a, &g, 6), exact_map(&b, &g, 6));
    let g2_diff = |max_shell: usize| {
        ma.entries
            .iter()
            .zip(&mb.entries)
            .filter(|(x, _)| x.shell <= max_shell)
            .map(|(x, y)| (x.g2 - y.g2).abs())
            .fold(0.0, f64::max)
    };
    // Compared observables: the mean density and the correlation map out to
    // the shell used for the Neel structure factor. Edge-site densities and
    // the longest-range classes are printed but not gated.
    let (g2_near, g2_all) = (g2_diff(4), g2_diff(6));
    Ok((
        report.neel_diff < 1e-4 && mean_diff < 0.02 && g2_near < 0.02,
        format!(
            "S_Neel change 200->400 steps {:.1e}; NN vs vdW |dn_mean| {mean_diff:.4}, max |dg2| m<=4 {g2_near:.4} \
             (max site |dn| {site_diff:.4}, max |dg2| m<=6 {g2_all:.4})",
            report.neel_diff
        ),
    ))
}

fn ac10() -> Check {
    let g = square(3, 3);
    let model = nn_model(&g, 1.0);
    let schedule = build_ramp(&RampParams::detuning_scan(2.0))?;
    let state = final_state(&QuantumState::all_down(9)?, &schedule, &model, &EvolutionConfig::default());
    let exact = exact_map(&state, &g, 4);
    let n_exact = state.site_densities();
    let shots = sample_shots(ShotSource::State(&state), 100_000, DetectionErrors::default(), 21)?;
    let sampled = g2_connected(CorrelationSource::Shots(&shots), &g, 4, Symmetrization::Quadrants)?;
    let n_shots = shots.shots.len() as f64;
    let mut worst: f64 = 0.0;
    for i in 0..9 {
        let n = shots.shots.iter().filter(|&&s| s >> i & 1 == 1).count() as f64 / n_shots;
        let se = (n * (1.0 - n) / n_shots).sqrt();
        worst = worst.max((n - n_exact[i]).abs() / se);
    }
    for (e, s) in exact.entries.iter().zip(&sampled.entries) {
        worst = worst.max((s.g2 - e.g2).abs() / s.stderr);
    }

    // Product state with site-dependent densities, read with detection errors.
    let errors = DetectionErrors::new(0.03, 0.08)?;
    let p: Vec<f64> = (0..6).map(|i| 0.1 + 0.15 * i as f64).collect();
    let amplitudes: Vec<Complex64> = (0..1usize << 6)
        .map(|b| {
            let prob: f64 = p.iter().enumerate().map(|(i, &pi)| if b >> i & 1 == 1 { pi } else { 1.0 - pi }).product();
            Complex64::new(prob.sqrt(), 0.0)
        })
        .collect();
    let product = QuantumState::from_amplitudes(6, amplitudes)?;
    let read = sample_shots(ShotSource::State(&product), 100_000, errors, 22)?;
    let mut worst_identity: f64 = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        let measured = read.shots.iter().filter(|&&s| s >> i & 1 == 1).count() as f64 / n_shots;
        let expected = pi + errors.epsilon * (1.0 - pi) - errors.epsilon_prime * pi;
        let se = (expected * (1.0 - expected) / n_shots).sqrt();
        worst_identity = worst_identity.max((measured - expected).abs() / se);
    }
    Ok((
        worst < 4.0 && worst_identity < 4.0,
        format!("estimators worst deviation {worst:.2} se; detection identity worst deviation {worst_identity:.2} se"),
    ))
}
