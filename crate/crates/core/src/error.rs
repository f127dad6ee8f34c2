use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volume axis too small: {dims:?}, need at least {min} per axis")]
    DimsTooSmall { dims: [usize; 3], min: usize },

    #[error("grid mismatch: {0:?} vs {1:?}")]
    DimsMismatch([usize; 3], [usize; 3]),

    #[error("invalid volume data: {0}")]
    InvalidData(String),

    #[error("header {path} declares {expected} bytes of payload, raw file has {actual}")]
    HeaderMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("phantom geometry does not fit the grid: {0}")]
    SpecOutOfBounds(String),

    #[error("segmentation has no LV voxels")]
    EmptyMask,

    #[error("structuring element size must be odd and >= 1, got {0}")]
    BadKernel(usize),

    #[error("volume is constant, no iso-surface")]
    NoSurface,

    #[error("mesh is not edge-manifold: {0}")]
    MeshNotManifold(String),

    #[error("degenerate triangle {index} (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("requested {k} eigenpairs but mesh has {n} vertices")]
    KTooLarge { k: usize, n: usize },

    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("need at least two non-zero eigenvalues, basis has {0}")]
    InsufficientSpectrum(usize),

    #[error("basis too small: need {needed} functions, have {available}")]
    BasisTooSmall { needed: usize, available: usize },

    #[error("vertex rounds to voxel {voxel:?} outside grid {dims:?}")]
    OutOfGrid { voxel: [i64; 3], dims: [usize; 3] },

    #[error("constraint field has no valid voxels")]
    NoConstraints,

    #[error("pyramid of {levels} levels is infeasible for grid {dims:?}")]
    TooManyLevels { levels: usize, dims: [usize; 3] },

    #[error("non-finite loss at phase {phase}, level {level}, iteration {iteration}: {detail}")]
    NonFiniteLoss {
        phase: usize,
        level: usize,
        iteration: usize,
        detail: String,
    },

    #[error("evaluation region is empty")]
    EmptyRegion,

    #[error("every voxel in the region has a degenerate flow vector")]
    AllDegenerate,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
