//! Dense 3D optical flow for volumetric cardiac images, constrained by
//! spectral surface correspondences.
//!
//! Pipeline: [`phantom`] pairs with analytic torsion → [`meshgen`] LV surface
//! meshes → [`spectral`] ZoomOut point maps → [`constraints`] on the
//! segmentation hull → [`flowsolve`] two-phase variational solve →
//! [`metrics`] against ground truth. [`bench`] runs torsion sweeps.

pub mod bench;
pub mod constraints;
pub mod error;
pub mod flowsolve;
pub mod meshgen;
pub mod metrics;
pub mod phantom;
pub mod spectral;
pub mod volgrid;

pub use error::{Error, Result};
