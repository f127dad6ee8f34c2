//! Displacement constraints on the segmentation hull, derived from a
//! surface point map.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::meshgen::TriangleMesh;
use crate::spectral::PointMap;
use crate::volgrid::{read_channels, sub, write_channels, BinaryVolume, Dims, SegmentationMask, Vec3};

/// Neighbours used by the hull interpolation.
pub const IDW_NEIGHBOURS: usize = 8;
pub const IDW_POWER: f64 = 2.0;

/// Per-voxel displacement constraints with a validity mask. Invalid voxels
/// hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintField {
    dims: Dims,
    vectors: Vec<Vec3>,
    valid: Vec<bool>,
}

impl ConstraintField {
    pub fn new(dims: Dims, vectors: Vec<Vec3>, valid: Vec<bool>) -> Result<Self> {
        if vectors.len() != dims.len() || valid.len() != dims.len() {
            return Err(Error::InvalidData(format!(
                "{} vectors / {} flags for {} voxels",
                vectors.len(),
                valid.len(),
                dims.len()
            )));
        }
        for (v, &ok) in vectors.iter().zip(&valid) {
            if ok && !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidData("non-finite constraint".into()));
            }
            if !ok && *v != [0.0; 3] {
                return Err(Error::InvalidData("invalid voxel with non-zero constraint".into()));
            }
        }
        Ok(ConstraintField { dims, vectors, valid })
    }

    pub fn empty(dims: Dims) -> Self {
        ConstraintField {
            dims,
            vectors: vec![[0.0; 3]; dims.len()],
            valid: vec![false; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn valid_mask(&self) -> BinaryVolume {
        BinaryVolume::new(self.dims, self.valid.clone()).expect("same grid")
    }

    /// Four channels per voxel: `u, v, w, valid` (valid as 0/1).
    pub fn write(&self, path: &Path) -> Result<()> {
        let data: Vec<f64> = self
            .vectors
            .iter()
            .zip(&self.valid)
            .flat_map(|(v, &ok)| [v[0], v[1], v[2], if ok { 1.0 } else { 0.0 }])
            .collect();
        write_channels(path, self.dims, 1.0, 4, &data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, data) = read_channels(path, 4)?;
        let mut vectors = Vec::with_capacity(data.len() / 4);
        let mut valid = Vec::with_capacity(data.len() / 4);
        for c in data.chunks_exact(4) {
            let ok = c[3] > 0.5;
            vectors.push(if ok { [c[0], c[1], c[2]] } else { [0.0; 3] });
            valid.push(ok);
        }
        ConstraintField::new(header.dims.into(), vectors, valid)
    }
}

/// `(systole position, displacement)` for every target vertex:
/// `d = pos_B(t) − pos_A(map[t])`, attached at `pos_A(map[t])`.
pub fn vertex_displacements(pmap: &PointMap, mesh_a: &TriangleMesh, mesh_b: &TriangleMesh) -> Result<Vec<(Vec3, Vec3)>> {
    pmap.validate(mesh_a.vertex_count())?;
    if pmap.map.len() != mesh_b.vertex_count() {
        return Err(Error::InvalidData(format!(
            "point map has {} entries for {} target vertices",
            pmap.map.len(),
            mesh_b.vertex_count()
        )));
    }
    Ok(pmap
        .map
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let pa = mesh_a.vertices[s];
            (pa, sub(mesh_b.vertices[t], pa))
        })
        .collect())
}

/// Places each displacement at its rounded position; collisions average.
pub fn rasterize(displacements: &[(Vec3, Vec3)], dims: Dims) -> Result<ConstraintField> {
    let mut acc: BTreeMap<usize, (Vec3, usize)> = BTreeMap::new();
    for (p, d) in displacements {
        let r = p.map(|c| c.round() as i64);
        let idx = dims.checked_index(r[0], r[1], r[2]).ok_or(Error::OutOfGrid {
            voxel: r,
            dims: dims.as_array(),
        })?;
        let e = acc.entry(idx).or_insert(([0.0; 3], 0));
        for c in 0..3 {
            e.0[c] += d[c];
        }
        e.1 += 1;
    }
    let mut field = ConstraintField::empty(dims);
    for (idx, (sum, n)) in acc {
        field.vectors[idx] = sum.map(|s| s / n as f64);
        field.valid[idx] = true;
    }
    Ok(field)
}

/// LV voxels with at least one of their 6 face neighbours outside the LV
/// region (the grid exterior counts as outside).
pub fn extract_hull(mask: &SegmentationMask) -> Result<BinaryVolume> {
    let lv = mask.lv_voxels();
    if lv.is_all_unset() {
        return Err(Error::EmptyMask);
    }
    let d = mask.dims();
    Ok(BinaryVolume::from_fn(d, |x, y, z| {
        if !lv.get(x, y, z) {
            return false;
        }
        let (x, y, z) = (x as i64, y as i64, z as i64);
        [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            .iter()
            .any(|(dx, dy, dz)| !lv.get_signed(x + dx, y + dy, z + dz))
    }))
}

/// Inverse-distance weighting (power 2) of the nearest sparse constraints
/// onto every hull voxel. Hull voxels that carry a sparse constraint keep it.
pub fn interpolate_to_hull(sparse: &ConstraintField, hull: &BinaryVolume) -> Result<ConstraintField> {
    let d = sparse.dims();
    d.ensure_same(&hull.dims())?;
    let sources: Vec<([f64; 3], Vec3)> = (0..d.len())
        .filter(|&i| sparse.valid[i])
        .map(|i| (d.coords(i).map(|c| c as f64), sparse.vectors[i]))
        .collect();
    if sources.is_empty() {
        return Err(Error::NoConstraints);
    }
    let targets = hull.indices();
    let values: Vec<Vec3> = targets
        .par_iter()
        .map(|&i| {
            if sparse.valid[i] {
                return sparse.vectors[i];
            }
            let q = d.coords(i).map(|c| c as f64);
            let mut near: Vec<(f64, usize)> = sources
                .iter()
                .enumerate()
                .map(|(s, (p, _))| {
                    let e = sub(*p, q);
                    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2], s)
                })
                .collect();
            let k = IDW_NEIGHBOURS.min(near.len());
            near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut acc, mut wsum) = ([0.0; 3], 0.0);
            for (d2, s) in near {
                let w = 1.0 / d2.powf(IDW_POWER / 2.0);
                for c in 0..3 {
                    acc[c] += w * sources[s].1[c];
                }
                wsum += w;
            }
            acc.map(|a| a / wsum)
        })
        .collect();
    let mut out = ConstraintField::empty(d);
    for (&i, v) in targets.iter().zip(values) {
        out.vectors[i] = v;
        out.valid[i] = true;
    }
    Ok(out)
}

/// Point map → displacements → rasterised sparse field → hull interpolation.
pub fn build_constraints(
    pmap: &PointMap,
    mesh_a: &TriangleMesh,
    mesh_b: &TriangleMesh,
    mask: &SegmentationMask,
) -> Result<ConstraintField> {
    let disp = vertex_displacements(pmap, mesh_a, mesh_b)?;
    let sparse = rasterize(&disp, mask.dims())?;
    interpolate_to_hull(&sparse, &extract_hull(mask)?)
}
