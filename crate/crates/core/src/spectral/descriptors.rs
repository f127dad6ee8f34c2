use nalgebra::DMatrix;

use super::eigen::SpectralBasis;
use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const ZERO_EIGENVALUE: f64 = 1e-9;

/// Wave kernel signature with `n` log-energies spread uniformly over
/// `[log λ₂, log λ_k]` (non-zero eigenvalues only) and band width
/// `σ = 7/6 · spacing`. Rows are vertices.
pub fn wks(basis: &SpectralBasis, n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 energy levels, got {n}")));
    }
    let lam_max = basis.eigenvalues.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..basis.len())
        .filter(|&i| basis.eigenvalues[i] > ZERO_EIGENVALUE * lam_max)
        .collect();
    if active.len() < 2 {
        return Err(Error::InsufficientSpectrum(active.len()));
    }
    let logs: Vec<f64> = active.iter().map(|&i| basis.eigenvalues[i].ln()).collect();
    let (e_min, e_max) = (logs[0], logs[logs.len() - 1]);
    let delta = (e_max - e_min) / (n - 1) as f64;
    let sigma = 7.0 / 6.0 * delta;
    let nv = basis.vertex_count();
    let phi = &basis.eigenfunctions;
    let mut out = DMatrix::zeros(nv, n);
    for j in 0..n {
        let e = e_min + j as f64 * delta;
        let g: Vec<f64> = logs
            .iter()
            .map(|l| (-(e - l).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        for v in 0..nv {
            let s: f64 = active
                .iter()
                .zip(&g)
                .map(|(&i, gi)| phi[(v, i)] * phi[(v, i)] * gi)
                .sum();
            out[(v, j)] = s / total;
        }
    }
    Ok(out)
}
