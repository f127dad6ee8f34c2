//! Volumetric grid types shared by every stage of the pipeline.
//!
//! All grids use one linear layout, x fastest: `index = x + nx * (y + ny * z)`.
//! Coordinates are in voxel units with voxel centres at integer positions.

mod io;
mod sample;

pub use io::{
    raw_path, read_channels, read_flow, read_mask, read_volume, write_channels, write_flow,
    write_mask, write_volume, VolumeHeader,
};
pub use sample::{central_gradient, trilinear_gradient, trilinear_sample};
pub(crate) use sample::{sample_grad_raw, sample_raw};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Grid extent `(nx, ny, nz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl From<[usize; 3]> for Dims {
    fn from(d: [usize; 3]) -> Self {
        Dims::new(d[0], d[1], d[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let yz = i / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    /// Index of a signed coordinate, `None` outside the grid.
    #[inline]
    pub fn checked_index(&self, x: i64, y: i64, z: i64) -> Option<usize> {
        if x < 0 || y < 0 || z < 0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        (x < self.nx && y < self.ny && z < self.nz).then(|| self.index(x, y, z))
    }

    pub fn min_axis(&self) -> usize {
        self.nx.min(self.ny).min(self.nz)
    }

    pub fn ensure_same(&self, other: &Dims) -> Result<()> {
        if self != other {
            return Err(Error::DimsMismatch(self.as_array(), other.as_array()));
        }
        Ok(())
    }

    pub fn ensure_min_axis(&self, min: usize) -> Result<()> {
        if self.min_axis() < min {
            return Err(Error::DimsTooSmall {
                dims: self.as_array(),
                min,
            });
        }
        Ok(())
    }

    /// Iterator over every voxel as `(linear index, [x, y, z])`.
    pub fn voxels(&self) -> impl Iterator<Item = (usize, [usize; 3])> + '_ {
        (0..self.len()).map(move |i| (i, self.coords(i)))
    }
}

/// Scalar intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    data: Vec<f64>,
    spacing: f64,
}

impl ScalarVolume {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_spacing(dims, data, 1.0)
    }

    pub fn with_spacing(dims: Dims, data: Vec<f64>, spacing: f64) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidData("empty grid".into()));
        }
        if data.len() != dims.len() {
            return Err(Error::InvalidData(format!(
                "{} values for grid of {} voxels",
                data.len(),
                dims.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite intensity at voxel {i}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidData(format!("spacing must be positive, got {spacing}")));
        }
        Ok(ScalarVolume { dims, data, spacing })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        ScalarVolume {
            dims,
            data: vec![value; dims.len()],
            spacing: 1.0,
        }
    }

    /// Builds a volume by evaluating `f` at every voxel centre.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let data = (0..dims.len())
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        ScalarVolume {
            dims,
            data,
            spacing: 1.0,
        }
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        ScalarVolume {
            dims,
            data,
            spacing: 1.0,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dynamic range `max - min`.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }
}

/// Segmentation label codes; the numeric values are the on-disk `u8` codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum Label {
    #[default]
    Background = 0,
    Myocardium = 1,
    Cavity = 2,
}

impl Label {
    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Myocardium),
            2 => Some(Label::Cavity),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Myocardium or cavity.
    pub fn is_lv(self) -> bool {
        !matches!(self, Label::Background)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    dims: Dims,
    labels: Vec<Label>,
}

impl SegmentationMask {
    pub fn new(dims: Dims, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::InvalidData(format!(
                "{} labels for grid of {} voxels",
                labels.len(),
                dims.len()
            )));
        }
        Ok(SegmentationMask { dims, labels })
    }

    pub fn background(dims: Dims) -> Self {
        SegmentationMask {
            dims,
            labels: vec![Label::Background; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Label {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: Label) {
        let i = self.dims.index(x, y, z);
        self.labels[i] = label;
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Voxels with the given label as a binary volume.
    pub fn select(&self, label: Label) -> BinaryVolume {
        BinaryVolume {
            dims: self.dims,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Myocardium ∪ cavity, without the emptiness check of `meshgen::lv_region`.
    pub fn lv_voxels(&self) -> BinaryVolume {
        BinaryVolume {
            dims: self.dims,
            data: self.labels.iter().map(|l| l.is_lv()).collect(),
        }
    }
}

/// Boolean per-voxel volume (regions, hulls, morphology results).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryVolume {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryVolume {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::InvalidData(format!(
                "{} flags for grid of {} voxels",
                data.len(),
                dims.len()
            )));
        }
        Ok(BinaryVolume { dims, data })
    }

    pub fn empty(dims: Dims) -> Self {
        BinaryVolume {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let data = (0..dims.len())
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        BinaryVolume { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.index(x, y, z)]
    }

    /// Out-of-grid positions read as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64, z: i64) -> bool {
        self.dims
            .checked_index(x, y, z)
            .is_some_and(|i| self.data[i])
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.dims.index(x, y, z);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_unset(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Linear indices of set voxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// 0/1 intensity volume.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume::from_raw(
            self.dims,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    /// Number of 26-connected components of the set voxels.
    pub fn connected_components(&self) -> usize {
        let d = self.dims;
        let mut seen = vec![false; d.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..d.len() {
            if !self.data[start] || seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let [x, y, z] = d.coords(i);
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if let Some(j) =
                                d.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz)
                            {
                                if self.data[j] && !seen[j] {
                                    seen[j] = true;
                                    stack.push(j);
                                }
                            }
                        }
                    }
                }
            }
        }
        count
    }
}

/// Dense displacement field, one `(u, v, w)` vector per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    dims: Dims,
    vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(dims: Dims, vectors: Vec<Vec3>) -> Result<Self> {
        if vectors.len() != dims.len() {
            return Err(Error::InvalidData(format!(
                "{} vectors for grid of {} voxels",
                vectors.len(),
                dims.len()
            )));
        }
        if let Some(i) = vectors.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidData(format!("non-finite flow at voxel {i}")));
        }
        Ok(FlowField { dims, vectors })
    }

    pub fn zeros(dims: Dims) -> Self {
        FlowField {
            dims,
            vectors: vec![[0.0; 3]; dims.len()],
        }
    }

    pub fn constant(dims: Dims, v: Vec3) -> Self {
        FlowField {
            dims,
            vectors: vec![v; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> Vec3) -> Self {
        let vectors = (0..dims.len())
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        FlowField { dims, vectors }
    }

    pub(crate) fn from_raw(dims: Dims, vectors: Vec<Vec3>) -> Self {
        debug_assert_eq!(vectors.len(), dims.len());
        FlowField { dims, vectors }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[Vec3] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [Vec3] {
        &mut self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.vectors[self.dims.index(x, y, z)]
    }

    /// One component as a scalar volume.
    pub fn component(&self, c: usize) -> ScalarVolume {
        ScalarVolume::from_raw(self.dims, self.vectors.iter().map(|v| v[c]).collect())
    }

    /// Mean vector norm over the whole grid.
    pub fn mean_norm(&self) -> f64 {
        self.vectors.iter().map(|v| norm(*v)).sum::<f64>() / self.vectors.len() as f64
    }
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
