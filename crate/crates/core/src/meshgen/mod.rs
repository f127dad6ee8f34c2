//! LV surface meshes: region extraction, morphology, marching cubes and
//! spectral smoothing.

mod marching_cubes;
mod mesh;
mod morphology;

pub use marching_cubes::marching_cubes;
pub use mesh::{icosphere, TriangleMesh, MIN_TRIANGLE_AREA};
pub use morphology::{dilate, erode, morpho_close_open};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{build_lbo, eigendecompose};
use crate::volgrid::{BinaryVolume, Label, SegmentationMask};

/// Myocardium ∪ cavity.
pub fn lv_region(mask: &SegmentationMask) -> Result<BinaryVolume> {
    if mask.count(Label::Myocardium) == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(mask.lv_voxels())
}

/// Projects the vertex coordinates onto the first `k` LBO eigenfunctions.
pub fn spectral_smooth(mesh: &TriangleMesh, k: usize) -> Result<TriangleMesh> {
    mesh.check_manifold(true)?;
    let n = mesh.vertex_count();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let op = build_lbo(mesh)?;
    let basis = eigendecompose(&op, k)?;
    let phi = &basis.eigenfunctions;
    let mut coords = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    for (c, col) in coords.iter_mut().enumerate() {
        let weighted = DVector::from_fn(n, |i, _| op.mass[i] * mesh.vertices[i][c]);
        *col = phi * (phi.transpose() * weighted);
    }
    let vertices = (0..n).map(|i| [coords[0][i], coords[1][i], coords[2][i]]).collect();
    Ok(mesh.with_vertices(vertices))
}

/// Parameters of the segmentation-to-surface pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshParams {
    pub close: usize,
    pub open: usize,
    pub eigs: usize,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            close: 5,
            open: 7,
            eigs: 120,
        }
    }
}

/// Mask → LV region → close/open → marching cubes → spectral smoothing.
pub fn build_lv_mesh(mask: &SegmentationMask, params: &MeshParams) -> Result<TriangleMesh> {
    let region = morpho_close_open(&lv_region(mask)?, params.close, params.open)?;
    let raw = marching_cubes(&region, 0.5)?;
    let smooth = spectral_smooth(&raw, params.eigs.min(raw.vertex_count()))?;
    smooth.check_nondegenerate()?;
    Ok(smooth)
}
