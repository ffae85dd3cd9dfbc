use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::LinearGenerator;

type C64 = Complex64;

/// Accuracy and size limits of the Krylov exponential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    /// Target error in vector norm for one call.
    pub tol: f64,
    /// Largest subspace dimension before the step is subdivided.
    pub max_dim: usize,
    /// How many times a sub-step may be halved before giving up.
    pub max_halvings: u32,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tol: 1e-10,
            max_dim: 30,
            max_halvings: 40,
        }
    }
}

/// Work done by one call.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KrylovStats {
    pub substeps: usize,
    pub matvecs: usize,
    /// Sum of the a-posteriori error estimates of all sub-steps.
    pub error_estimate: f64,
}

/// Reusable Krylov workspace; holds the basis vectors between calls so a
/// long propagation does not reallocate.
#[derive(Debug)]
pub struct KrylovPropagator {
    config: KrylovConfig,
    basis: Vec<Vec<C64>>,
}

/// `exp(-i G dt) v` with default settings. `dt` may be negative.
pub fn krylov_exp_apply<G: LinearGenerator>(
    generator: &G,
    state: &[C64],
    dt: f64,
    config: KrylovConfig,
) -> Result<Vec<C64>> {
    let mut out = state.to_vec();
    KrylovPropagator::new(config)?.apply(generator, &mut out, dt)?;
    Ok(out)
}

impl KrylovPropagator {
    pub fn new(config: KrylovConfig) -> Result<Self> {
        if !(config.tol.is_finite() && config.tol > 0.0) {
            return Err(Error::invalid("krylov.tol", "must be positive"));
        }
        if !(2..=MAX_BASIS).contains(&config.max_dim) {
            return Err(Error::invalid(
                "krylov.max_dim",
                format!("must lie in 2..={MAX_BASIS}"),
            ));
        }
        Ok(KrylovPropagator {
            config,
            basis: Vec::new(),
        })
    }

    pub fn config(&self) -> KrylovConfig {
        self.config
    }

    /// Replace `state` by `exp(-i G dt) state`.
    ///
    /// The step is split adaptively: a sub-step of length `tau` is accepted
    /// once its error estimate is below `tol * tau / |dt|`, so the total
    /// error of the call stays below `tol` times the initial norm.
    pub fn apply<G: LinearGenerator>(
        &mut self,
        generator: &G,
        state: &mut [C64],
        dt: f64,
    ) -> Result<KrylovStats> {
        self.advance(generator, state, dt, None).map(|a| a.stats)
    }

    /// Like [`Self::apply`], but stop early at the first time the squared
    /// norm of the state falls to `threshold`. The stopping time is located
    /// within the Krylov subspace of the current sub-step, so no extra
    /// matrix-vector products are spent on it.
    pub(crate) fn advance<G: LinearGenerator>(
        &mut self,
        generator: &G,
        state: &mut [C64],
        dt: f64,
        threshold: Option<f64>,
    ) -> Result<Advance> {
        let dim = generator.dim();
        if state.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: state.len(),
            });
        }
        if !dt.is_finite() {
            return Err(Error::NonFinite { context: "time step" });
        }
        let mut stats = KrylovStats::default();
        if dt == 0.0 {
            return Ok(Advance {
                elapsed: 0.0,
                hit: false,
                stats,
            });
        }
        let total = dt.abs();
        let sign = dt.signum();
        let m_max = self.config.max_dim.min(dim);
        while self.basis.len() < m_max + 1 {
            self.basis.push(vec![C64::new(0.0, 0.0); dim]);
        }
        for v in &mut self.basis {
            v.resize(dim, C64::new(0.0, 0.0));
        }

        let mut remaining = total;
        let mut next_tau = total;
        while remaining > 0.0 {
            let beta = norm(state);
            if !beta.is_finite() {
                return Err(Error::NonFinite { context: "Krylov state" });
            }
            if beta == 0.0 {
                break;
            }
            let mut tau = next_tau.min(remaining);
            let budget = |tau: f64| self.config.tol * tau / total;

            let (v0, rest) = self.basis.split_first_mut().expect("basis allocated");
            v0.iter_mut().zip(state.iter()).for_each(|(v, s)| *v = s / beta);
            let _ = rest;

            let mut h = DMatrix::<C64>::zeros(m_max + 1, m_max);
            let mut m = 0;
            let mut breakdown = false;
            let mut accepted: Option<(Vec<C64>, f64)> = None;
            for j in 0..m_max {
                let (head, tail) = self.basis.split_at_mut(j + 1);
                let w = &mut tail[0];
                generator.apply_into(&head[j], w);
                stats.matvecs += 1;
                let lo = if generator.is_hermitian() { j.saturating_sub(1) } else { 0 };
                let before = norm(w);
                let mut coef = [C64::new(0.0, 0.0); MAX_BASIS];
                let against = &head[lo..];
                project(against, w, &mut coef[..against.len()]);
                subtract(against, &coef[..against.len()], w);
                for (i, c) in coef[..against.len()].iter().enumerate() {
                    h[(lo + i, j)] += c;
                }
                // Classical Gram-Schmidt is repeated only when cancellation
                // has eaten most of the vector.
                if norm(w) < 0.7 * before {
                    project(against, w, &mut coef[..against.len()]);
                    subtract(against, &coef[..against.len()], w);
                    for (i, c) in coef[..against.len()].iter().enumerate() {
                        h[(lo + i, j)] += c;
                    }
                }
                if generator.is_hermitian() {
                    h[(j, j)].im = 0.0;
                }
                let hn = norm(w);
                h[(j + 1, j)] = C64::new(hn, 0.0);
                m = j + 1;
                let scale = h[(j, j)].norm().max(hn).max(1e-300);
                if hn <= 1e-14 * scale {
                    breakdown = true;
                    break;
                }
                w.iter_mut().for_each(|x| *x /= hn);

                // Cheap test on the current subspace; only a few dimensions
                // are needed for short sub-steps.
                if m >= 2 && (m % 2 == 0 || m == m_max) {
                    let small = SmallExp::new(&h, m, generator.is_hermitian());
                    let y = small.apply(sign * tau);
                    let est = beta * hn * y[m - 1].norm();
                    if est <= budget(tau) {
                        accepted = Some((y, est));
                        break;
                    }
                }
            }

            let small = SmallExp::new(&h, m, generator.is_hermitian());
            let (mut y, est) = if breakdown {
                (small.apply(sign * tau), 0.0)
            } else if let Some(found) = accepted {
                found
            } else {
                let hn = h[(m, m - 1)].re;
                let mut halvings = 0u32;
                loop {
                    tau *= 0.5;
                    halvings += 1;
                    let y = small.apply(sign * tau);
                    let est = beta * hn * y[m - 1].norm();
                    if est <= budget(tau) {
                        break (y, est);
                    }
                    if halvings >= self.config.max_halvings {
                        return Err(Error::KrylovNotConverged {
                            tol: self.config.tol,
                            estimate: est / (tau / total),
                            halvings,
                        });
                    }
                }
            };
            if y.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite {
                    context: "Krylov small exponential",
                });
            }
            let mut hit = false;
            if let Some(r) = threshold {
                let norm_sqr = |y: &[C64]| beta * beta * y.iter().map(|c| c.norm_sqr()).sum::<f64>();
                if norm_sqr(&y) <= r {
                    // The squared norm decays monotonically under a
                    // dissipative generator. Regula falsi with the Illinois
                    // modification brackets the crossing.
                    let f = |t: f64| norm_sqr(&small.apply(sign * t)) - r;
                    let (mut lo, mut hi) = (0.0, tau);
                    let (mut f_lo, mut f_hi) = (beta * beta - r, norm_sqr(&y) - r);
                    let mut side = 0i8;
                    for _ in 0..100 {
                        if hi - lo <= 1e-14 * tau || f_hi == 0.0 {
                            break;
                        }
                        let mut mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
                        if !(mid > lo && mid < hi) {
                            mid = 0.5 * (lo + hi);
                        }
                        let f_mid = f(mid);
                        if f_mid > 0.0 {
                            lo = mid;
                            f_lo = f_mid;
                            if side == -1 {
                                f_hi *= 0.5;
                            }
                            side = -1;
                        } else {
                            hi = mid;
                            f_hi = f_mid;
                            if side == 1 {
                                f_lo *= 0.5;
                            }
                            side = 1;
                        }
                    }
                    tau = hi;
                    y = small.apply(sign * tau);
                    hit = true;
                }
            }

            let scaled: Vec<C64> = y.iter().map(|c| c * beta).collect();
            combine(&self.basis[..m], &scaled, state);
            stats.substeps += 1;
            stats.error_estimate += est;
            remaining -= tau;
            if remaining <= 1e-15 * total {
                remaining = 0.0;
            }
            if hit {
                return Ok(Advance {
                    elapsed: sign * (total - remaining),
                    hit: true,
                    stats,
                });
            }
            // A sub-step that converged well below the budget lets the next
            // one try to grow again.
            next_tau = if accepted_quickly(m, m_max) { tau * 2.0 } else { tau };
        }
        Ok(Advance {
            elapsed: dt,
            hit: false,
            stats,
        })
    }
}

/// Outcome of [`KrylovPropagator::advance`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Advance {
    /// Signed time actually propagated.
    pub elapsed: f64,
    /// The norm threshold was reached at `elapsed`.
    pub hit: bool,
    pub stats: KrylovStats,
}

fn accepted_quickly(m: usize, m_max: usize) -> bool {
    m + 4 < m_max
}

/// `exp(-i H_m t) e_1` for the projected matrix.
enum SmallExp {
    Hermitian(SymmetricEigen<f64, nalgebra::Dyn>),
    General(DMatrix<C64>),
}

impl SmallExp {
    fn new(h: &DMatrix<C64>, m: usize, hermitian: bool) -> Self {
        if hermitian {
            let mut t = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = h[(i, i)].re;
                if i + 1 < m {
                    let b = h[(i + 1, i)].re;
                    t[(i + 1, i)] = b;
                    t[(i, i + 1)] = b;
                }
            }
            SmallExp::Hermitian(SymmetricEigen::new(t))
        } else {
            SmallExp::General(h.view((0, 0), (m, m)).into_owned())
        }
    }

    fn apply(&self, t: f64) -> Vec<C64> {
        match self {
            SmallExp::Hermitian(eig) => {
                let q = &eig.eigenvectors;
                let m = q.nrows();
                let coeffs: Vec<C64> = (0..m)
                    .map(|k| C64::from_polar(q[(0, k)], -eig.eigenvalues[k] * t))
                    .collect();
                (0..m)
                    .map(|i| (0..m).map(|k| coeffs[k] * q[(i, k)]).sum())
                    .collect()
            }
            SmallExp::General(h) => {
                let e = (h * C64::new(0.0, -t)).exp();
                e.column(0).iter().copied().collect()
            }
        }
    }
}

#[inline]
fn dot(a: &[C64], b: &[C64]) -> C64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        re += x.re * y.re + x.im * y.im;
        im += x.re * y.im - x.im * y.re;
    }
    C64::new(re, im)
}

/// Elements per block in the fused basis kernels; one block of every basis
/// vector fits in L2 together.
const BLOCK: usize = 256;

/// Upper bound on the Krylov dimension, for stack buffers.
const MAX_BASIS: usize = 128;

/// `c_i = <v_i, w>` for all basis vectors in one sweep over memory.
fn project(basis: &[Vec<C64>], w: &[C64], c: &mut [C64]) {
    c.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
    for (start, wb) in (0..w.len()).step_by(BLOCK).zip(w.chunks(BLOCK)) {
        for (ci, v) in c.iter_mut().zip(basis) {
            *ci += dot(&v[start..start + wb.len()], wb);
        }
    }
}

/// `w -= sum_i c_i v_i`.
fn subtract(basis: &[Vec<C64>], c: &[C64], w: &mut [C64]) {
    for (start, wb) in (0..w.len()).step_by(BLOCK).zip(w.chunks_mut(BLOCK)) {
        for (ci, v) in c.iter().zip(basis) {
            axpy(-ci, &v[start..start + wb.len()], wb);
        }
    }
}

/// `out = sum_i c_i v_i`.
fn combine(basis: &[Vec<C64>], c: &[C64], out: &mut [C64]) {
    for (start, ob) in (0..out.len()).step_by(BLOCK).zip(out.chunks_mut(BLOCK)) {
        ob.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for (ci, v) in c.iter().zip(basis) {
            axpy(*ci, &v[start..start + ob.len()], ob);
        }
    }
}

#[inline]
fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
