//! Leading-order short-time predictions for connected correlators.
//!
//! For a ramp of duration `T` with constant `Omega` and linear detuning, the
//! leading Magnus term replaces `H(t)` by its time average `H_avg`, which has
//! the same couplings and `Omega` and the mean detuning `delta_avg`.
//! Starting from all sites down, the connected correlator of two sites
//! joined by a single chain of `m` nearest-neighbour bonds starts at order
//! `T^(2 + 4m)`, with coefficients tabulated below for `m = 1, 2, 3`. On a
//! lattice the single-path value is multiplied by the number of shortest
//! paths joining the two sites.

use std::io::Write;

use num_rational::Rational64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{count_shortest_paths, displacement_classes, LatticeGeometry, Symmetrization};
use crate::measure::{CorrelationMap, CorrelationSource, Moments};
use crate::operator::{CouplingMap, CouplingSpec, RydbergModel};
use crate::propagate::{evolve_unitary, EvolutionConfig, KrylovConfig, QuantumState};
use crate::schedule::RampSchedule;

/// Correlator values below this are treated as numerical noise.
pub const NUMERICAL_FLOOR: f64 = 1e-14;

/// Smallest number of usable grid points for a scaling fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Krylov settings for the verification runs: the correlators of interest
/// are many orders of magnitude below one.
pub const TIGHT_KRYLOV: KrylovConfig = KrylovConfig {
    tol: 1e-14,
    max_dim: 40,
    max_halvings: 40,
};

/// Time-averaged drive of a constant-`Omega` ramp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AveragedDrive {
    /// rad/us.
    pub omega: f64,
    /// rad/us.
    pub delta_avg: f64,
    /// us.
    pub duration: f64,
}

impl AveragedDrive {
    /// The constant-drive schedule `H_avg` over `duration`.
    pub fn schedule(&self) -> Result<RampSchedule> {
        RampSchedule::constant(self.omega, self.delta_avg, self.duration)
    }

    pub fn with_duration(self, duration: f64) -> Self {
        AveragedDrive { duration, ..self }
    }
}

/// `H_avg` of a schedule whose Rabi frequency is constant over the driven
/// span. The detuning is then linear, so its mean is the mean of the end
/// values.
pub fn average_hamiltonian(schedule: &RampSchedule) -> Result<AveragedDrive> {
    if !schedule.has_constant_omega() {
        return Err(Error::invalid(
            "schedule",
            "the short-time expansion needs constant Omega (no rise or fall)",
        ));
    }
    let t = schedule.duration();
    let start = schedule.evaluate(0.0)?;
    let end = schedule.evaluate(t)?;
    Ok(AveragedDrive {
        omega: start.omega,
        delta_avg: 0.5 * (start.delta + end.delta),
        duration: t,
    })
}

/// Single-path coefficient: a sum of `c * U^a * delta^b` terms over a
/// common denominator, multiplied by `Omega^(2m + 2)`.
struct Coefficient {
    terms: &'static [(i64, i32, i32)],
    denominator: i64,
}

/// Sign included: the `m = 1` and `m = 3` expressions carry a minus.
const COEFFICIENTS: [Coefficient; 3] = [
    Coefficient {
        terms: &[(-1, 2, 0), (3, 1, 1)],
        denominator: 288,
    },
    Coefficient {
        terms: &[(77, 4, 0), (-340, 3, 1), (375, 2, 2)],
        denominator: 2_419_200,
    },
    Coefficient {
        terms: &[(-4279, 6, 0), (24766, 5, 1), (-46725, 4, 2), (28350, 3, 3)],
        denominator: 26_824_089_600,
    },
];

/// Largest shell with a tabulated coefficient.
pub const MAX_SHELL: usize = 3;

fn coefficient(m: usize) -> Result<&'static Coefficient> {
    if !(1..=MAX_SHELL).contains(&m) {
        return Err(Error::invalid(
            "m",
            format!("leading-order coefficients exist for m = 1..={MAX_SHELL}"),
        ));
    }
    Ok(&COEFFICIENTS[m - 1])
}

/// Power of `T` of the leading term at shell `m`.
pub fn leading_power(m: usize) -> i32 {
    2 + 4 * m as i32
}

/// Exact rational coefficients of the single-path polynomial in `U` and
/// `delta_avg`, as `(coefficient, power of U, power of delta)`.
pub fn symbolic_coefficient(m: usize) -> Result<Vec<(Rational64, i32, i32)>> {
    let c = coefficient(m)?;
    Ok(c
        .terms
        .iter()
        .map(|&(num, a, b)| (Rational64::new(num, c.denominator), a, b))
        .collect())
}

/// Human-readable form of the single-path expression.
pub fn coefficient_text(m: usize) -> Result<String> {
    let c = coefficient(m)?;
    let poly: Vec<String> = c
        .terms
        .iter()
        .map(|&(num, a, b)| {
            let mut s = format!("{num}");
            if a > 0 {
                s.push_str(&format!(" U^{a}"));
            }
            if b > 0 {
                s.push_str(&format!(" d^{b}"));
            }
            s
        })
        .collect();
    Ok(format!(
        "({}) Omega^{} T^{} / {}",
        poly.join(" + "),
        2 * m + 2,
        leading_power(m),
        c.denominator
    ))
}

/// Leading-order `g2` for one path of `m` bonds of coupling `u`.
pub fn single_path_g2(m: usize, u: f64, drive: &AveragedDrive) -> Result<f64> {
    let c = coefficient(m)?;
    let poly: f64 = c
        .terms
        .iter()
        .map(|&(num, a, b)| num as f64 * u.powi(a) * drive.delta_avg.powi(b))
        .sum();
    Ok(poly / c.denominator as f64 * drive.omega.powi(2 * m as i32 + 2) * drive.duration.powi(leading_power(m)))
}

/// Leading-order prediction for one displacement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub m: usize,
    pub paths: u64,
    /// Coupling used in the single-path expression.
    pub coupling: f64,
    /// Multiplies `T^power`.
    pub coefficient: f64,
    pub power: i32,
    pub value: f64,
}

/// Leading-order `g2(k, l)` with nearest-neighbour couplings.
///
/// `paths` is usually [`count_shortest_paths`] of the displacement. For
/// anisotropic couplings only the nearest-neighbour shell is available; it
/// uses the coupling of the bond in question.
pub fn predict_g2_leading(
    m: usize,
    drive: &AveragedDrive,
    couplings: CouplingSpec,
    displacement: (i64, i64),
    paths: u64,
) -> Result<Prediction> {
    let CouplingSpec::Nn { u_z, u_w } = couplings else {
        return Err(Error::invalid(
            "couplings.mode",
            "short-time predictions are for nearest-neighbour couplings",
        ));
    };
    let coupling = if u_z == u_w {
        u_w
    } else if m == 1 {
        if displacement.1 == 0 {
            u_w
        } else {
            u_z
        }
    } else {
        return Err(Error::invalid(
            "couplings",
            "anisotropic predictions are only available for m = 1",
        ));
    };
    let unit = drive.with_duration(1.0);
    let per_path = single_path_g2(m, coupling, &unit)?;
    let coefficient = per_path * paths as f64;
    let power = leading_power(m);
    Ok(Prediction {
        m,
        paths,
        coupling,
        coefficient,
        power,
        value: coefficient * drive.duration.powi(power),
    })
}

/// One grid point of a scaling check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub m: usize,
    pub k: i64,
    pub l: i64,
    pub t: f64,
    pub g2_measured: f64,
    pub g2_predicted: f64,
    pub ratio: f64,
}

/// Scaling result for one displacement class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScaling {
    pub k: i64,
    pub l: i64,
    pub paths: u64,
    /// Least-squares slope of `log|g2|` against `log T`.
    pub exponent: f64,
    pub expected_exponent: i32,
    /// Measured over predicted at the smallest usable `T`.
    pub coefficient_ratio: f64,
    pub usable_points: usize,
    pub rows: Vec<ScalingRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub m: usize,
    pub omega: f64,
    pub delta_avg: f64,
    pub classes: Vec<ClassScaling>,
}

impl ScalingReport {
    /// `m,k,l,T,g2_measured,g2_predicted,ratio`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m", "k", "l", "T", "g2_measured", "g2_predicted", "ratio"])?;
        for c in &self.classes {
            for r in &c.rows {
                w.write_record([
                    r.m.to_string(),
                    r.k.to_string(),
                    r.l.to_string(),
                    format!("{:e}", r.t),
                    format!("{:e}", r.g2_measured),
                    format!("{:e}", r.g2_predicted),
                    format!("{}", r.ratio),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }

    pub fn class(&self, k: i64, l: i64) -> Option<&ClassScaling> {
        self.classes.iter().find(|c| (c.k, c.l) == (k, l))
    }
}

/// Exact `g2` after evolving under `H_avg` for each duration in `t_grid`.
pub fn short_time_maps(
    geometry: &LatticeGeometry,
    couplings: &CouplingMap,
    drive: &AveragedDrive,
    max_shell: usize,
    t_grid: &[f64],
) -> Result<Vec<CorrelationMap>> {
    let model = RydbergModel::new(couplings.clone())?;
    let initial = QuantumState::all_down(geometry.len())?;
    let sym = Symmetrization::default_for(geometry.kind());
    let classes = displacement_classes(geometry, max_shell, sym)?;
    // H_avg is constant, so a single interval is exact.
    let mut config = EvolutionConfig::with_steps(1);
    config.krylov = TIGHT_KRYLOV;
    t_grid
        .iter()
        .map(|&t| {
            let schedule = drive.with_duration(t).schedule()?;
            let state = evolve_unitary(&initial, &schedule, &model, &config)?
                .pop()
                .expect("final snapshot")
                .state;
            let moments = Moments::from_state(&state);
            CorrelationMap::compute(CorrelationSource::Exact(&moments), &classes, sym)
        })
        .collect()
}

/// Compare exact short-time correlators at shell `m` with the leading-order
/// prediction over `t_grid`, and fit the power law.
pub fn verify_scaling(
    geometry: &LatticeGeometry,
    couplings: &CouplingMap,
    drive: &AveragedDrive,
    m: usize,
    t_grid: &[f64],
) -> Result<ScalingReport> {
    coefficient(m)?;
    if t_grid.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::invalid("t_grid", "durations must be positive"));
    }
    let maps = short_time_maps(geometry, couplings, drive, m, t_grid)?;
    let kind = geometry.kind();
    let mut classes = Vec::new();
    let template = maps.first().ok_or_else(|| Error::invalid("t_grid", "empty grid"))?;
    for entry in template.entries.iter().filter(|e| e.shell == m) {
        let (k, l) = entry.canonical;
        let paths = count_shortest_paths(kind, k, l);
        let mut rows = Vec::with_capacity(t_grid.len());
        for (&t, map) in t_grid.iter().zip(&maps) {
            let measured = map.get(k, l).expect("same classes").g2;
            let predicted = predict_g2_leading(m, &drive.with_duration(t), couplings.spec(), (k, l), paths)?.value;
            rows.push(ScalingRow {
                m,
                k,
                l,
                t,
                g2_measured: measured,
                g2_predicted: predicted,
                ratio: measured / predicted,
            });
        }
        let usable: Vec<&ScalingRow> = rows.iter().filter(|r| r.g2_measured.abs() >= NUMERICAL_FLOOR).collect();
        if usable.len() < MIN_FIT_POINTS {
            return Err(Error::invalid(
                "t_grid",
                format!(
                    "only {} of {} points above the numerical floor for ({k}, {l})",
                    usable.len(),
                    rows.len()
                ),
            ));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = usable.iter().map(|r| (r.t.ln(), r.g2_measured.abs().ln())).unzip();
        let exponent = slope(&xs, &ys);
        let smallest = usable
            .iter()
            .min_by(|a, b| a.t.total_cmp(&b.t))
            .expect("non-empty");
        classes.push(ClassScaling {
            k,
            l,
            paths,
            exponent,
            expected_exponent: leading_power(m),
            coefficient_ratio: smallest.ratio,
            usable_points: usable.len(),
            rows,
        });
    }
    Ok(ScalingReport {
        m,
        omega: drive.omega,
        delta_avg: drive.delta_avg,
        classes,
    })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};
    use crate::operator::build_couplings;

    fn drive(omega: f64, delta_avg: f64, duration: f64) -> AveragedDrive {
        AveragedDrive {
            omega,
            delta_avg,
            duration,
        }
    }

    #[test]
    fn nearest_neighbour_example_value() {
        let v = single_path_g2(1, 1.0, &drive(1.0, 0.0, 0.1)).unwrap();
        assert!((v + 1e-6 / 288.0).abs() < 1e-20);
        assert!(single_path_g2(1, 1.0, &drive(1.0, 1.0 / 3.0, 0.1)).unwrap().abs() < 1e-22);
    }

    #[test]
    fn signs_alternate_at_zero_detuning() {
        let d = drive(1.0, 0.0, 0.5);
        let signs: Vec<f64> = (1..=3).map(|m| single_path_g2(m, 1.0, &d).unwrap().signum()).collect();
        assert_eq!(signs, vec![-1.0, 1.0, -1.0]);
        assert!(single_path_g2(4, 1.0, &d).is_err());
    }

    #[test]
    fn nearest_neighbour_prediction_is_even_under_sign_flip() {
        let spec = |u| CouplingSpec::isotropic_nn(u);
        let a = predict_g2_leading(1, &drive(0.7, 0.4, 0.2), spec(1.3), (1, 0), 1).unwrap();
        let b = predict_g2_leading(1, &drive(0.7, -0.4, 0.2), spec(-1.3), (1, 0), 1).unwrap();
        assert!((a.value - b.value).abs() < 1e-18);
    }

    #[test]
    fn averaged_sweep() {
        let tau = std::f64::consts::TAU;
        let s = RampSchedule::sweep(tau * 1.8, tau * -6.0, tau * 4.5, 0.44).unwrap();
        let d = average_hamiltonian(&s).unwrap();
        assert!((d.delta_avg - tau * -0.75).abs() < 1e-12);
        let longer = RampSchedule::sweep(tau * 1.8, tau * -6.0, tau * 4.5, 3.0).unwrap();
        assert_eq!(average_hamiltonian(&longer).unwrap().delta_avg, d.delta_avg);
        let c = RampSchedule::constant(1.0, 0.3, 2.0).unwrap();
        assert_eq!(average_hamiltonian(&c).unwrap().delta_avg, 0.3);
        let ramp = crate::schedule::build_ramp(&crate::schedule::RampParams::time_trace()).unwrap();
        assert!(average_hamiltonian(&ramp).is_err());
    }

    #[test]
    fn anisotropy_only_at_first_shell() {
        let spec = CouplingSpec::Nn { u_z: 2.0, u_w: 1.0 };
        let d = drive(1.0, 0.0, 0.1);
        assert_eq!(predict_g2_leading(1, &d, spec, (0, 1), 1).unwrap().coupling, 2.0);
        assert_eq!(predict_g2_leading(1, &d, spec, (1, 0), 1).unwrap().coupling, 1.0);
        assert!(predict_g2_leading(2, &d, spec, (1, 1), 2).is_err());
        assert!(predict_g2_leading(1, &d, CouplingSpec::Vdw { c6: 1.0 }, (1, 0), 1).is_err());
    }

    #[test]
    fn pair_matches_first_shell_law() {
        let g = build_lattice(LatticeKind::Chain, &[2], Boundary::Open, 1.0, 1.0).unwrap();
        let c = build_couplings(&g, CouplingSpec::isotropic_nn(1.0)).unwrap();
        let grid = [0.02, 0.03, 0.05, 0.08];
        let report = verify_scaling(&g, &c, &drive(1.0, 0.2, 1.0), 1, &grid).unwrap();
        let cls = report.class(1, 0).unwrap();
        assert!((cls.exponent - 6.0).abs() < 0.01, "{}", cls.exponent);
        assert!((cls.coefficient_ratio - 1.0).abs() < 0.01, "{}", cls.coefficient_ratio);
    }
}
