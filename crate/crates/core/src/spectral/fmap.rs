//! Functional maps: descriptor-based initialisation, ZoomOut refinement and
//! point-map extraction.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eigen::SpectralBasis;
use crate::error::{Error, Result};

/// Maps source spectral coefficients to target coefficients
/// (`k_target × k_source`).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
    /// Set when the least-squares system behind the map was rank deficient.
    pub rank_deficient: bool,
}

impl FunctionalMap {
    pub fn identity(k: usize) -> Self {
        FunctionalMap {
            c: DMatrix::identity(k, k),
            rank_deficient: false,
        }
    }

    pub fn size(&self) -> usize {
        self.c.nrows()
    }
}

/// For each target vertex, the index of its source vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointMap {
    pub map: Vec<usize>,
    #[serde(rename = "C_final_size")]
    pub c_final_size: usize,
}

impl PointMap {
    pub fn validate(&self, source_vertices: usize) -> Result<()> {
        match self.map.iter().find(|&&s| s >= source_vertices) {
            Some(s) => Err(Error::InvalidData(format!(
                "point map references source vertex {s} of {source_vertices}"
            ))),
            None => Ok(()),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// `Φ^(k)ᵀ A desc`: spectral coefficients of descriptor columns.
pub fn spectral_coefficients(basis: &SpectralBasis, k: usize, desc: &DMatrix<f64>) -> DMatrix<f64> {
    let weighted = DMatrix::from_fn(desc.nrows(), desc.ncols(), |i, j| basis.mass[i] * desc[(i, j)]);
    basis.eigenfunctions.columns(0, k).transpose() * weighted
}

/// Minimum-norm least-squares solution of `C·Â = B̂`.
pub fn fit_fmap(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> FunctionalMap {
    let svd = a_hat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let pinv = svd
        .pseudo_inverse(cutoff)
        .expect("pseudo-inverse of a full SVD");
    let rank_deficient = rank < a_hat.nrows();
    if rank_deficient {
        log::warn!(
            "descriptor coefficients have rank {rank} < {}; using the minimum-norm map",
            a_hat.nrows()
        );
    }
    FunctionalMap {
        c: b_hat * pinv,
        rank_deficient,
    }
}

/// Least-squares map of size `k0` fitted to descriptor coefficients.
pub fn init_fmap(
    basis_a: &SpectralBasis,
    basis_b: &SpectralBasis,
    desc_a: &DMatrix<f64>,
    desc_b: &DMatrix<f64>,
    k0: usize,
) -> Result<FunctionalMap> {
    if desc_a.ncols() != desc_b.ncols() {
        return Err(Error::InvalidData(format!(
            "descriptor counts differ: {} vs {}",
            desc_a.ncols(),
            desc_b.ncols()
        )));
    }
    let available = basis_a.len().min(basis_b.len());
    if k0 == 0 || k0 > available {
        return Err(Error::BasisTooSmall {
            needed: k0.max(1),
            available,
        });
    }
    let a_hat = spectral_coefficients(basis_a, k0, desc_a);
    let b_hat = spectral_coefficients(basis_b, k0, desc_b);
    Ok(fit_fmap(&a_hat, &b_hat))
}

/// Index of the nearest source row for every target row; ties go to the
/// lowest source index.
pub fn nearest_rows(targets: &DMatrix<f64>, sources: &DMatrix<f64>) -> Vec<usize> {
    assert_eq!(targets.ncols(), sources.ncols());
    let st = sources.transpose();
    let sq: Vec<f64> = st.column_iter().map(|c| c.norm_squared()).collect();
    const CHUNK: usize = 256;
    let chunks: Vec<usize> = (0..targets.nrows()).step_by(CHUNK).collect();
    chunks
        .par_iter()
        .flat_map_iter(|&start| {
            let rows = CHUNK.min(targets.nrows() - start);
            let g = targets.rows(start, rows) * &st;
            (0..rows)
                .map(|r| {
                    let mut best = (f64::INFINITY, 0);
                    for (j, s) in sq.iter().enumerate() {
                        let d = s - 2.0 * g[(r, j)];
                        if d < best.0 {
                            best = (d, j);
                        }
                    }
                    best.1
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Spatial step: nearest neighbours between `Φ_B^(k)` rows and rows of
/// `Φ_A^(k) Cᵀ`.
pub fn pointmap_from_fmap(c: &DMatrix<f64>, basis_a: &SpectralBasis, basis_b: &SpectralBasis) -> Vec<usize> {
    let (kb, ka) = c.shape();
    let sources = basis_a.eigenfunctions.columns(0, ka) * c.transpose();
    let targets = basis_b.eigenfunctions.columns(0, kb).into_owned();
    nearest_rows(&targets, &sources)
}

/// Spectral step: `C = Φ_B^(k)ᵀ A_B Π Φ_A^(k)`.
pub fn fmap_from_pointmap(map: &[usize], basis_a: &SpectralBasis, basis_b: &SpectralBasis, k: usize) -> DMatrix<f64> {
    let pulled = DMatrix::from_fn(map.len(), k, |t, j| basis_b.mass[t] * basis_a.eigenfunctions[(map[t], j)]);
    basis_b.eigenfunctions.columns(0, k).transpose() * pulled
}

/// ZoomOut: alternate point-map extraction and map re-estimation while the
/// spectral size grows by `step` per iteration.
pub fn zoomout(
    fm: &FunctionalMap,
    basis_a: &SpectralBasis,
    basis_b: &SpectralBasis,
    iterations: usize,
    step: usize,
) -> Result<(FunctionalMap, PointMap)> {
    let k0 = fm.size();
    if fm.c.ncols() != k0 {
        return Err(Error::InvalidData(format!("functional map must be square, got {:?}", fm.c.shape())));
    }
    let needed = k0 + iterations * step;
    let available = basis_a.len().min(basis_b.len());
    if needed > available {
        return Err(Error::BasisTooSmall { needed, available });
    }
    let mut c = fm.c.clone();
    let mut k = k0;
    for _ in 0..iterations {
        let map = pointmap_from_fmap(&c, basis_a, basis_b);
        k += step;
        c = fmap_from_pointmap(&map, basis_a, basis_b, k);
    }
    let map = pointmap_from_fmap(&c, basis_a, basis_b);
    Ok((
        FunctionalMap {
            c,
            rank_deficient: fm.rank_deficient,
        },
        PointMap { map, c_final_size: k },
    ))
}
