use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HamiltonianView, RydbergModel};
use crate::error::{Error, Result};
use crate::schedule::Drive;

/// Systems up to this dimension are diagonalised densely.
const DENSE_LIMIT: usize = 1024;
const LANCZOS_MAX_DIM: usize = 120;
const LANCZOS_RESTARTS: usize = 60;

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Lowest eigenvalues, ascending.
    pub values: Vec<f64>,
    /// Matching normalised eigenvectors, when requested.
    pub vectors: Option<Vec<Vec<f64>>>,
}

/// Lowest `n_levels` eigenvalues of `H(omega, delta)`.
///
/// At `omega = 0` the spectrum is the sorted list of classical
/// configuration energies. Small systems are diagonalised densely; larger
/// ones use Lanczos with explicit deflation of converged vectors, which
/// resolves exact degeneracies one vector at a time.
pub fn spectrum_at(
    model: &RydbergModel,
    omega: f64,
    delta: f64,
    n_levels: usize,
    with_vectors: bool,
) -> Result<Spectrum> {
    let dim = model.dim();
    if n_levels == 0 || n_levels > dim {
        return Err(Error::invalid(
            "n_levels",
            format!("must lie in 1..={dim}"),
        ));
    }
    let h = model.at(Drive { omega, delta });

    if omega == 0.0 {
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| h.diagonal(a).total_cmp(&h.diagonal(b)).then(a.cmp(&b)));
        order.truncate(n_levels);
        let values = order.iter().map(|&b| h.diagonal(b)).collect();
        let vectors = with_vectors.then(|| {
            order
                .iter()
                .map(|&b| {
                    let mut v = vec![0.0; dim];
                    v[b] = 1.0;
                    v
                })
                .collect()
        });
        return Ok(Spectrum { values, vectors });
    }

    if dim <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(h.to_dense_real());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        order.truncate(n_levels);
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = with_vectors.then(|| {
            order
                .iter()
                .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
                .collect()
        });
        return Ok(Spectrum { values, vectors });
    }

    let mut locked: Vec<Vec<f64>> = Vec::with_capacity(n_levels);
    let mut values = Vec::with_capacity(n_levels);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..n_levels {
        let (value, vector) = lowest_in_complement(&h, &locked, &mut rng)?;
        values.push(value);
        locked.push(vector);
    }
    // Deflation finds levels in order up to round-off; sort to be safe.
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let vectors = with_vectors.then(|| order.iter().map(|&i| locked[i].clone()).collect());
    Ok(Spectrum {
        values: sorted_values,
        vectors,
    })
}

fn real_apply(h: &HamiltonianView<'_>, x: &[f64], y: &mut [f64]) {
    let n = h.model().n_sites();
    let half = 0.5 * h.omega;
    for (b, out) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            s += x[b ^ (1 << i)];
        }
        *out = h.diagonal(b) * x[b] + half * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in against {
            let c = dot(u, v);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn lowest_in_complement(
    h: &HamiltonianView<'_>,
    locked: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let dim = h.model().dim();
    let mut start: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
    orthogonalize(&mut start, locked);
    normalize(&mut start);
    let scale = (0..dim).map(|b| h.diagonal(b).abs()).fold(h.omega.abs(), f64::max);
    let tol = 1e-11 * scale.max(1.0);
    let max_dim = LANCZOS_MAX_DIM.min(dim - locked.len());

    for _ in 0..LANCZOS_RESTARTS {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        loop {
            let j = basis.len() - 1;
            real_apply(h, &basis[j], &mut w);
            let alpha = dot(&basis[j], &w);
            alphas.push(alpha);
            orthogonalize(&mut w, &basis);
            orthogonalize(&mut w, locked);
            let beta = normalize(&mut w);

            let m = alphas.len();
            let exhausted = beta < 1e-13 * scale.max(1.0) || m >= max_dim;
            if m.is_multiple_of(5) || exhausted {
                let mut t = DMatrix::<f64>::zeros(m, m);
                for i in 0..m {
                    t[(i, i)] = alphas[i];
                    if i + 1 < m {
                        t[(i, i + 1)] = betas[i];
                        t[(i + 1, i)] = betas[i];
                    }
                }
                let eig = SymmetricEigen::new(t);
                let (imin, theta) = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty tridiagonal");
                let y = eig.eigenvectors.column(imin);
                let residual = beta * y[m - 1].abs();
                let mut ritz = vec![0.0; dim];
                for (coef, v) in y.iter().zip(&basis) {
                    ritz.iter_mut().zip(v).for_each(|(r, x)| *r += coef * x);
                }
                orthogonalize(&mut ritz, locked);
                normalize(&mut ritz);
                if residual < tol || beta < 1e-13 * scale.max(1.0) {
                    return Ok((theta, ritz));
                }
                if exhausted {
                    start = ritz;
                    break;
                }
            }
            betas.push(beta);
            basis.push(w.clone());
        }
    }
    Err(Error::NonFinite {
        context: "Lanczos eigensolver did not converge",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, Boundary, LatticeKind};
    use crate::operator::{build_couplings, CouplingSpec};

    fn model(kind: LatticeKind, dims: &[usize], u: f64) -> RydbergModel {
        let g = build_lattice(kind, dims, Boundary::Open, 1.0, 1.0).unwrap();
        RydbergModel::new(build_couplings(&g, CouplingSpec::isotropic_nn(u)).unwrap()).unwrap()
    }

    #[test]
    fn single_site_closed_form() {
        let m = model(LatticeKind::Chain, &[1], 1.0);
        let (omega, delta) = (1.3, 0.4);
        let s = spectrum_at(&m, omega, delta, 2, false).unwrap();
        let root = (delta * delta + omega * omega).sqrt();
        assert!((s.values[0] - (-delta - root) / 2.0).abs() < 1e-12);
        assert!((s.values[1] - (-delta + root) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn plaquette_antiferromagnetic_window() {
        let m = model(LatticeKind::Square, &[2, 2], 1.0);
        let s = spectrum_at(&m, 0.0, 1.0, 3, true).unwrap();
        assert_eq!(s.values[0], -2.0);
        assert_eq!(s.values[1], -2.0);
        assert!(s.values[2] > -2.0);
        let s = spectrum_at(&m, 0.0, -0.5, 2, false).unwrap();
        assert_eq!(s.values[0], 0.0);
        assert!(s.values[1] > 0.0);
    }

    #[test]
    fn lanczos_matches_dense_including_degeneracies() {
        // Two identical 5-site chains plus a free site: 2048 states, past the
        // dense limit, with exact degeneracies from swapping the chains.
        let mut entries = Vec::new();
        for offset in [0, 5] {
            for i in 0..4 {
                entries.push((offset + i, offset + i + 1, 1.0));
            }
        }
        let c = crate::operator::CouplingMap::from_entries(11, &entries).unwrap();
        let m = RydbergModel::new(c).unwrap();
        let iterative = spectrum_at(&m, 0.9, 1.1, 5, true).unwrap();
        let h = m.at(Drive {
            omega: 0.9,
            delta: 1.1,
        });
        let mut dense: Vec<f64> = SymmetricEigen::new(h.to_dense_real())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense.sort_by(f64::total_cmp);
        assert!((dense[1] - dense[2]).abs() < 1e-9 || (dense[2] - dense[3]).abs() < 1e-9);
        for (a, b) in iterative.values.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn too_many_levels() {
        let m = model(LatticeKind::Chain, &[2], 1.0);
        assert!(spectrum_at(&m, 1.0, 0.0, 5, false).is_err());
    }
}
