//! Smallest eigenpairs of the generalised problem `W φ = λ A φ`.
//!
//! Small problems go through a dense symmetric solver on
//! `A^{-1/2} W A^{-1/2}`. Larger ones use block Lanczos with full
//! reorthogonalisation on the shift-inverted operator
//! `A^{1/2} (W - σA)^{-1} A^{1/2}`, whose largest eigenvalues correspond to
//! the smallest `λ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::lbo::{LaplaceOperator, SparseMatrix};
use super::skyline::SkylineCholesky;
use crate::error::{Error, Result};

/// Problems up to this many vertices are solved densely.
const DENSE_LIMIT: usize = 700;
const BLOCK: usize = 16;
const ATTEMPTS: usize = 5;
/// Per-pair residual tolerance relative to `λ_k + |σ|`.
const RESIDUAL_TOL: f64 = 1e-9;

/// Eigenvalues ascending; eigenfunctions as columns (vertices × k),
/// orthonormal under the lumped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: DMatrix<f64>,
    pub mass: Vec<f64>,
}

impl SpectralBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.mass.len()
    }

    /// `‖WΦ − AΦΛ‖_F / ‖WΦ‖_F`.
    pub fn residual(&self, op: &LaplaceOperator) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (c, &lam) in self.eigenvalues.iter().enumerate() {
            let phi: Vec<f64> = self.eigenfunctions.column(c).iter().copied().collect();
            let wphi = op.stiffness.mul_vec(&phi);
            for i in 0..phi.len() {
                num += (wphi[i] - lam * self.mass[i] * phi[i]).powi(2);
                den += wphi[i] * wphi[i];
            }
        }
        (num / den).sqrt()
    }

    /// `max |ΦᵀAΦ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let a = DVector::from_column_slice(&self.mass);
        let weighted = DMatrix::from_fn(self.vertex_count(), self.len(), |i, j| {
            a[i] * self.eigenfunctions[(i, j)]
        });
        let g = self.eigenfunctions.transpose() * weighted;
        (g - DMatrix::identity(self.len(), self.len())).amax()
    }
}

/// The `k` smallest eigenpairs. Each eigenfunction's largest-magnitude entry
/// is made positive.
pub fn eigendecompose(op: &LaplaceOperator, k: usize) -> Result<SpectralBasis> {
    let n = op.vertex_count();
    if k > n || k == 0 {
        return Err(Error::KTooLarge { k, n });
    }
    let (values, vectors) = if n <= DENSE_LIMIT || 4 * k >= n {
        dense_pairs(op, k)
    } else {
        lanczos_pairs(op, k)?
    };
    Ok(finish(op, values, vectors))
}

/// Dense reference solver, exposed for cross-checks.
pub fn eigendecompose_dense(op: &LaplaceOperator, k: usize) -> Result<SpectralBasis> {
    let n = op.vertex_count();
    if k > n || k == 0 {
        return Err(Error::KTooLarge { k, n });
    }
    let (values, vectors) = dense_pairs(op, k);
    Ok(finish(op, values, vectors))
}

fn finish(op: &LaplaceOperator, values: Vec<f64>, mut vectors: DMatrix<f64>) -> SpectralBasis {
    for mut col in vectors.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    SpectralBasis {
        eigenvalues: values.into_iter().map(|v| v.max(0.0)).collect(),
        eigenfunctions: vectors,
        mass: op.mass.clone(),
    }
}

fn dense_pairs(op: &LaplaceOperator, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = op.vertex_count();
    let inv_sqrt: Vec<f64> = op.mass.iter().map(|a| 1.0 / a.sqrt()).collect();
    let mut m = op.stiffness.to_dense();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let m = 0.5 * (&m + m.transpose());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])] * inv_sqrt[i]);
    (values, vectors)
}

/// Removes from the columns of `r` their components along the first `cols`
/// columns of `v` (classical Gram–Schmidt, applied twice).
fn project_out(v: &DMatrix<f64>, cols: usize, r: &mut DMatrix<f64>) {
    if cols == 0 {
        return;
    }
    let basis = v.columns(0, cols);
    for _ in 0..2 {
        let coeffs = basis.transpose() * &*r;
        *r -= basis * coeffs;
    }
}

/// Orthonormalises the columns of `r` against `v[.., ..cols]` and each other,
/// replacing columns that vanish with fresh random directions.
fn orthonormalise(v: &DMatrix<f64>, cols: usize, r: &mut DMatrix<f64>, rng: &mut ChaCha8Rng) {
    project_out(v, cols, r);
    let b = r.ncols();
    for c in 0..b {
        for attempt in 0.. {
            let before = r.column(c).norm();
            for _ in 0..2 {
                for p in 0..c {
                    let d = r.column(p).dot(&r.column(c));
                    let pc = r.column(p).clone_owned();
                    r.column_mut(c).axpy(-d, &pc, 1.0);
                }
            }
            let after = r.column(c).norm();
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 0.0 {
                r.column_mut(c).scale_mut(1.0 / after);
                break;
            }
            assert!(attempt < 10, "cannot extend an orthonormal basis");
            let mut fresh = DMatrix::from_fn(r.nrows(), 1, |_, _| StandardNormal.sample(rng));
            project_out(v, cols, &mut fresh);
            r.set_column(c, &fresh.column(0));
        }
    }
}

fn lanczos_pairs(op: &LaplaceOperator, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = op.vertex_count();
    let w = &op.stiffness;
    let sqrt_a: Vec<f64> = op.mass.iter().map(|a| a.sqrt()).collect();
    let scale = w.diagonal().iter().sum::<f64>() / op.mass.iter().sum::<f64>();
    let sigma = -1e-4 * scale;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(w.values.len() + n);
    for i in 0..n {
        triplets.extend(w.row(i).map(|(j, v)| (i, j, v)));
        triplets.push((i, i, -sigma * op.mass[i]));
    }
    let chol = SkylineCholesky::factor(&SparseMatrix::from_triplets(n, triplets))?;
    let apply = |x: &[f64]| -> Vec<f64> {
        let b: Vec<f64> = x.iter().zip(&sqrt_a).map(|(x, s)| x * s).collect();
        let z = chol.solve(&b);
        z.iter().zip(&sqrt_a).map(|(z, s)| z * s).collect()
    };

    let b = BLOCK.min(k);
    let round_up = |m: usize| m.div_ceil(b) * b;
    let mut m = round_up((2 * k + 2 * b).max(k + 60)).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = f64::INFINITY;
    for _ in 0..ATTEMPTS {
        let mut v = DMatrix::<f64>::zeros(n, m);
        let mut opv = DMatrix::<f64>::zeros(n, m);
        let mut block = DMatrix::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
        orthonormalise(&v, 0, &mut block, &mut rng);
        let mut filled = 0;
        while filled < m {
            let width = b.min(m - filled);
            for c in 0..width {
                v.set_column(filled + c, &block.column(c));
                let col: Vec<f64> = block.column(c).iter().copied().collect();
                opv.set_column(filled + c, &DVector::from_vec(apply(&col)));
            }
            filled += width;
            if filled < m {
                let next = b.min(m - filled);
                block = opv.columns(filled - width, next).clone_owned();
                orthonormalise(&v, filled, &mut block, &mut rng);
            }
        }
        let h = v.transpose() * &opv;
        let h = 0.5 * (&h + h.transpose());
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
        let y = DMatrix::from_fn(m, k, |i, c| eig.eigenvectors[(i, order[c])]);
        let u = &v * y;

        let mut pairs: Vec<(f64, DVector<f64>, f64)> = (0..k)
            .map(|c| {
                let phi = DVector::from_fn(n, |i, _| u[(i, c)] / sqrt_a[i]);
                let wphi = w.mul_vec(phi.as_slice());
                let aphi_phi: f64 = (0..n).map(|i| op.mass[i] * phi[i] * phi[i]).sum();
                let lam = phi.iter().zip(&wphi).map(|(p, q)| p * q).sum::<f64>() / aphi_phi;
                let res = (0..n)
                    .map(|i| ((wphi[i] - lam * op.mass[i] * phi[i]) / sqrt_a[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (lam, phi, res)
            })
            .collect();
        pairs.sort_by(|a, c| a.0.total_cmp(&c.0));
        let lam_k = pairs.last().map_or(0.0, |p| p.0);
        let tol = RESIDUAL_TOL * (lam_k.abs() + sigma.abs());
        worst = pairs.iter().map(|p| p.2 / tol).fold(0.0, f64::max);
        if worst <= 1.0 {
            let values = pairs.iter().map(|p| p.0).collect();
            let vectors = DMatrix::from_fn(n, k, |i, c| pairs[c].1[i]);
            return Ok((values, vectors));
        }
        log::debug!("lanczos: {m} vectors, worst residual {worst:.2e} x tolerance");
        if m == n {
            break;
        }
        m = round_up(m * 8 / 5).min(n);
    }
    Err(Error::ConvergenceFailure(format!(
        "{k} eigenpairs of a {n}-vertex operator: residual {worst:.2e} x tolerance"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::icosphere;
    use crate::spectral::build_lbo;

    #[test]
    fn dense_and_lanczos_agree() {
        // a bumpy sphere has no exact eigenvalue multiplicities
        let mut m = icosphere(3, 1.0);
        for v in m.vertices.iter_mut() {
            let s = 1.0 + 0.1 * (3.0 * v[0]).sin() * (2.0 * v[2] + 0.3).cos() + 0.05 * v[1];
            *v = v.map(|c| c * s);
        }
        let op = build_lbo(&m).unwrap();
        let dense = eigendecompose_dense(&op, 30).unwrap();
        let (vals, vecs) = lanczos_pairs(&op, 30).unwrap();
        let lanczos = finish(&op, vals, vecs);
        for (a, b) in dense.eigenvalues.iter().zip(&lanczos.eigenvalues) {
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
        for c in 1..30 {
            let d = (dense.eigenfunctions.column(c) - lanczos.eigenfunctions.column(c)).amax();
            assert!(d < 1e-6, "eigenfunction {c} differs by {d}");
        }
        assert!(lanczos.residual(&op) < 1e-6);
        assert!(lanczos.orthonormality_error() < 1e-8);
    }

    #[test]
    fn krylov_space_can_fill_the_whole_mesh() {
        // 162 vertices, so the last block is narrower than the others
        let op = build_lbo(&icosphere(2, 1.0)).unwrap();
        let (vals, _) = lanczos_pairs(&op, 70).unwrap();
        let dense = eigendecompose_dense(&op, 70).unwrap();
        for (a, b) in dense.eigenvalues.iter().zip(&vals) {
            assert!((a - b.max(0.0)).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn kernel_is_constant() {
        let op = build_lbo(&icosphere(2, 2.0)).unwrap();
        let b = eigendecompose(&op, 5).unwrap();
        assert!(b.eigenvalues[0] <= 1e-6 * b.eigenvalues[1]);
        let phi0 = b.eigenfunctions.column(0);
        assert!(phi0.max() - phi0.min() < 1e-8);
        assert!(phi0[0] > 0.0);
    }

    #[test]
    fn k_must_fit() {
        let op = build_lbo(&icosphere(0, 1.0)).unwrap();
        assert!(matches!(eigendecompose(&op, 13), Err(Error::KTooLarge { .. })));
        assert!(eigendecompose(&op, 12).is_ok());
    }
}
