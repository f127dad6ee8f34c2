//! Laplace–Beltrami spectra and functional-map correspondence.

mod descriptors;
mod eigen;
mod fmap;
mod lbo;
mod skyline;

pub use descriptors::wks;
pub use eigen::{eigendecompose, eigendecompose_dense, SpectralBasis};
pub use fmap::{
    fit_fmap, fmap_from_pointmap, init_fmap, nearest_rows, pointmap_from_fmap,
    spectral_coefficients, zoomout, FunctionalMap, PointMap,
};
pub use lbo::{build_lbo, LaplaceOperator, SparseMatrix};
pub use skyline::{rcm_order, SkylineCholesky};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::meshgen::TriangleMesh;

/// Settings of the descriptor-initialised ZoomOut pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrespondParams {
    pub k0: usize,
    pub iterations: usize,
    pub step: usize,
    pub wks: usize,
}

impl Default for CorrespondParams {
    fn default() -> Self {
        CorrespondParams {
            k0: 3,
            iterations: 130,
            step: 1,
            wks: 50,
        }
    }
}

impl CorrespondParams {
    pub fn final_size(&self) -> usize {
        self.k0 + self.iterations * self.step
    }
}

/// Maps every vertex of `target` to a vertex of `source`.
pub fn correspond(
    source: &TriangleMesh,
    target: &TriangleMesh,
    params: &CorrespondParams,
) -> Result<(FunctionalMap, PointMap)> {
    let k = params.final_size();
    let basis_a = eigendecompose(&build_lbo(source)?, k)?;
    let basis_b = eigendecompose(&build_lbo(target)?, k)?;
    let desc_a = wks(&basis_a, params.wks)?;
    let desc_b = wks(&basis_b, params.wks)?;
    let fm = init_fmap(&basis_a, &basis_b, &desc_a, &desc_b, params.k0)?;
    zoomout(&fm, &basis_a, &basis_b, params.iterations, params.step)
}
