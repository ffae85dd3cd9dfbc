use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::DephasingModel;
use crate::error::{Error, Result};
use crate::operator::RydbergModel;
use crate::propagate::{piecewise_segments, QuantumState, TimeGrid};
use crate::schedule::RampSchedule;

type C64 = Complex64;

/// Largest system the dense density-matrix integrator accepts.
pub const MASTER_MAX_SITES: usize = 8;

const TRACE_TOL: f64 = 1e-9;

/// Dense density matrix over the `2^N` bitstring basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    n_sites: usize,
    matrix: DMatrix<C64>,
    pub time: f64,
}

impl DensityOperator {
    /// `|psi><psi|`.
    pub fn pure(state: &QuantumState) -> Result<Self> {
        check_size(state.n_sites())?;
        let v = nalgebra::DVector::from_column_slice(state.amplitudes());
        Ok(DensityOperator {
            n_sites: state.n_sites(),
            matrix: &v * v.adjoint(),
            time: state.time,
        })
    }

    /// Wrap a matrix after checking trace, Hermiticity and positivity.
    pub fn from_matrix(n_sites: usize, matrix: DMatrix<C64>) -> Result<Self> {
        check_size(n_sites)?;
        let dim = 1usize << n_sites;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        let rho = DensityOperator {
            n_sites,
            matrix,
            time: 0.0,
        };
        if (rho.trace() - 1.0).abs() > TRACE_TOL {
            return Err(Error::invalid("rho", "trace is not 1"));
        }
        if rho.hermiticity_error() > 1e-10 {
            return Err(Error::invalid("rho", "not Hermitian"));
        }
        if rho.min_eigenvalue() < -1e-9 {
            return Err(Error::invalid("rho", "not positive semidefinite"));
        }
        Ok(rho)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest entry of `|rho - rho^dagger|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = &self.matrix - self.matrix.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.matrix.nrows();
        // Embed the Hermitian matrix as a real symmetric one of twice the size.
        let mut real = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
        for i in 0..dim {
            for j in 0..dim {
                let z = 0.5 * (self.matrix[(i, j)] + self.matrix[(j, i)].conj());
                real[(i, j)] = z.re;
                real[(i + dim, j + dim)] = z.re;
                real[(i, j + dim)] = -z.im;
                real[(i + dim, j)] = z.im;
            }
        }
        SymmetricEigen::new(real)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Diagonal populations.
    pub fn probabilities(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    /// `rho_ab` element.
    pub fn get(&self, a: usize, b: usize) -> C64 {
        self.matrix[(a, b)]
    }
}

fn check_size(n_sites: usize) -> Result<()> {
    if n_sites == 0 || n_sites > MASTER_MAX_SITES {
        return Err(Error::TooLarge {
            sites: n_sites,
            limit: MASTER_MAX_SITES,
            method: "direct master-equation integration",
        });
    }
    Ok(())
}

/// Settings of the direct integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct MasterConfig {
    pub n_steps: usize,
    pub grid: TimeGrid,
    /// RK4 substeps are chosen so that `h * ||L||` stays below this value,
    /// with `||L||` bounded by Gershgorin's theorem.
    pub max_norm_step: f64,
    pub snapshots: Vec<f64>,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig {
            n_steps: 200,
            grid: TimeGrid::default(),
            max_norm_step: 0.02,
            snapshots: Vec::new(),
        }
    }
}

/// Integrate the Lindblad equation with the piecewise-constant drive and a
/// fixed-step classical fourth-order Runge-Kutta scheme. Returns the
/// requested snapshots followed by the final state (if not already
/// included).
pub fn evolve_master_direct(
    initial: &DensityOperator,
    schedule: &RampSchedule,
    model: &RydbergModel,
    dephasing: DephasingModel,
    config: &MasterConfig,
) -> Result<Vec<DensityOperator>> {
    DephasingModel::new(dephasing.gamma)?;
    check_size(model.n_sites())?;
    if initial.n_sites != model.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: initial.matrix.nrows(),
        });
    }
    if !(config.max_norm_step > 0.0 && config.max_norm_step <= 0.5) {
        return Err(Error::invalid("max_norm_step", "must lie in (0, 0.5]"));
    }
    let (segments, at_zero) = piecewise_segments(schedule, config.n_steps, config.grid, &config.snapshots)?;
    let dim = model.dim();
    let dephase = DMatrix::<f64>::from_fn(dim, dim, |a, b| {
        -0.5 * dephasing.gamma * f64::from((a ^ b).count_ones())
    });
    let mut rho = initial.clone();
    rho.time = 0.0;
    let mut out = Vec::new();
    if at_zero {
        out.push(rho.clone());
    }
    for seg in &segments {
        let h = model.at(seg.drive).to_dense();
        let h_norm = (0..dim)
            .map(|r| h.row(r).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let l_norm = 2.0 * h_norm + 0.5 * dephasing.gamma * model.n_sites() as f64;
        let substeps = if l_norm > 0.0 {
            ((seg.duration() * l_norm / config.max_norm_step).ceil() as usize).max(1)
        } else {
            1
        };
        let dt = seg.duration() / substeps as f64;
        for _ in 0..substeps {
            let k1 = lindblad(&h, &dephase, &rho.matrix);
            let k2 = lindblad(&h, &dephase, &(&rho.matrix + &k1 * C64::from(0.5 * dt)));
            let k3 = lindblad(&h, &dephase, &(&rho.matrix + &k2 * C64::from(0.5 * dt)));
            let k4 = lindblad(&h, &dephase, &(&rho.matrix + &k3 * C64::from(dt)));
            rho.matrix += (k1 + k2 * C64::from(2.0) + k3 * C64::from(2.0) + k4) * C64::from(dt / 6.0);
        }
        rho.time = seg.t1;
        let tr = rho.trace();
        if !tr.is_finite() || (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::TraceDrift {
                trace: tr,
                time: rho.time,
            });
        }
        if seg.snapshot_after {
            out.push(rho.clone());
        }
    }
    let end = rho.time;
    if out.last().is_none_or(|r| (r.time - end).abs() > 1e-12 * end.max(1.0)) {
        out.push(rho);
    }
    Ok(out)
}

/// `-i [H, rho] + D o rho` with the dephasing factors `D`.
fn lindblad(h: &DMatrix<C64>, dephase: &DMatrix<f64>, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let mut out = (h * rho - rho * h) * C64::new(0.0, -1.0);
    for ((o, r), d) in out.iter_mut().zip(rho.iter()).zip(dephase.iter()) {
        *o += r * *d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::CouplingMap;

    fn plus_state() -> QuantumState {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        QuantumState::from_amplitudes(1, vec![a, a]).unwrap()
    }

    #[test]
    fn single_site_coherence_decays() {
        let model = RydbergModel::new(CouplingMap::from_entries(1, &[]).unwrap()).unwrap();
        let gamma = 1.7;
        let s = RampSchedule::constant(0.0, 0.0, 1.0).unwrap();
        let cfg = MasterConfig {
            n_steps: 4,
            snapshots: vec![0.25, 0.5, 1.0],
            ..MasterConfig::default()
        };
        let rho0 = DensityOperator::pure(&plus_state()).unwrap();
        let out = evolve_master_direct(&rho0, &s, &model, DephasingModel::new(gamma).unwrap(), &cfg).unwrap();
        assert_eq!(out.len(), 3);
        for r in &out {
            let want = 0.5 * (-gamma * r.time / 2.0).exp();
            assert!((r.get(0, 1).re - want).abs() < 1e-8, "{} vs {want}", r.get(0, 1).re);
            assert!((r.get(1, 1).re - 0.5).abs() < 1e-12);
        }
        let p: Vec<f64> = out.iter().map(DensityOperator::purity).collect();
        assert!(p.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn unitary_limit_stays_pure() {
        let model = RydbergModel::new(CouplingMap::from_entries(3, &[(0, 1, 5.0), (1, 2, 5.0)]).unwrap()).unwrap();
        let s = RampSchedule::sweep(3.0, -6.0, 6.0, 1.0).unwrap();
        let psi = QuantumState::all_down(3).unwrap();
        let out = evolve_master_direct(
            &DensityOperator::pure(&psi).unwrap(),
            &s,
            &model,
            DephasingModel::default(),
            &MasterConfig {
                n_steps: 40,
                ..MasterConfig::default()
            },
        )
        .unwrap();
        let rho = out.last().unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-8);
        assert!(rho.hermiticity_error() < 1e-10);
        assert!(rho.min_eigenvalue() > -1e-9);
    }

    #[test]
    fn size_limit() {
        let model = RydbergModel::new(CouplingMap::from_entries(9, &[]).unwrap()).unwrap();
        let s = RampSchedule::constant(1.0, 0.0, 1.0).unwrap();
        let psi = QuantumState::all_down(9).unwrap();
        assert!(DensityOperator::pure(&psi).is_err());
        let rho = DensityOperator::pure(&QuantumState::all_down(8).unwrap()).unwrap();
        assert!(matches!(
            evolve_master_direct(&rho, &s, &model, DephasingModel::default(), &MasterConfig::default()),
            Err(Error::TooLarge { .. })
        ));
    }
}
