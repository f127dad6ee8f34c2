//! Synthetic left-ventricle phantoms with analytic torsion ground truth.
//!
//! The LV is a thick-walled cup aligned with +z: a flat base at the top, an
//! ellipsoidal apex at the bottom, and an azimuthal radius modulation so the
//! surface has no rotational or mirror symmetry. Intensity is an analytic
//! function of position, so the deformed ("diastole") image is produced by
//! evaluating it at the inverse torsion of every voxel centre; the dense
//! ground-truth flow is exact.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{
    add, cross, dot, norm, scale, sub, trilinear_sample, Dims, FlowField, Label, ScalarVolume,
    SegmentationMask, Vec3,
};

/// Largest torsion the phantom family is parametrised for, in degrees.
pub const MAX_TORSION_DEG: f64 = 35.0;

/// Twist about an axis, linear in axial distance and clamped at
/// `±half_height`: `θ(p) = total_angle · clamp(a / half_height, -1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionSpec {
    /// Degrees.
    pub total_angle: f64,
    pub axis: Vec3,
    pub center: Vec3,
    pub half_height: f64,
}

impl TorsionSpec {
    pub fn about_z(total_angle: f64, center: Vec3, half_height: f64) -> Self {
        TorsionSpec {
            total_angle,
            axis: [0.0, 0.0, 1.0],
            center,
            half_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_geometry()?;
        if !(0.0..=MAX_TORSION_DEG).contains(&self.total_angle) {
            return Err(Error::InvalidConfig(format!(
                "torsion angle {} outside [0, {MAX_TORSION_DEG}] degrees",
                self.total_angle
            )));
        }
        Ok(())
    }

    /// Checks everything except the angle sign, so reversed specs pass.
    fn validate_geometry(&self) -> Result<()> {
        if (norm(self.axis) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "torsion axis {:?} is not unit length",
                self.axis
            )));
        }
        if !(self.half_height > 0.0 && self.half_height.is_finite()) {
            return Err(Error::InvalidConfig("half_height must be positive".into()));
        }
        if !self.total_angle.is_finite() || self.total_angle.abs() > MAX_TORSION_DEG {
            return Err(Error::InvalidConfig(format!(
                "torsion angle {} out of range",
                self.total_angle
            )));
        }
        Ok(())
    }

    /// The same twist with the opposite sense; its deformation is the exact
    /// inverse of this one.
    pub fn reversed(&self) -> Self {
        TorsionSpec {
            total_angle: -self.total_angle,
            ..self.clone()
        }
    }

    /// Axial coordinate and radial part of `p` relative to the torsion center.
    #[inline]
    fn split(&self, p: Vec3) -> (f64, Vec3) {
        let q = sub(p, self.center);
        let a = dot(q, self.axis);
        (a, sub(q, scale(self.axis, a)))
    }

    /// Rotation angle at axial coordinate `a`, radians.
    #[inline]
    pub fn angle_at_axial(&self, a: f64) -> f64 {
        self.total_angle.to_radians() * (a / self.half_height).clamp(-1.0, 1.0)
    }

    /// Rotation angle at position `p`, radians.
    pub fn angle_at(&self, p: Vec3) -> f64 {
        self.angle_at_axial(self.split(p).0)
    }

    #[inline]
    fn rotate_radial(&self, r: Vec3, theta: f64) -> Vec3 {
        let (s, c) = theta.sin_cos();
        add(scale(r, c), scale(cross(self.axis, r), s))
    }

    /// Ground-truth displacement at `p`: `R(axis, θ(p))·r − r`.
    #[inline]
    pub fn displacement(&self, p: Vec3) -> Vec3 {
        let (a, r) = self.split(p);
        sub(self.rotate_radial(r, self.angle_at_axial(a)), r)
    }

    /// Forward map `p -> p + displacement(p)`.
    pub fn forward(&self, p: Vec3) -> Vec3 {
        add(p, self.displacement(p))
    }

    /// Inverse map: rotation by `-θ(p)`; exact because the axial coordinate
    /// is preserved.
    pub fn inverse(&self, p: Vec3) -> Vec3 {
        let (a, r) = self.split(p);
        let rotated = self.rotate_radial(r, -self.angle_at_axial(a));
        add(add(self.center, scale(self.axis, a)), rotated)
    }
}

/// Dense analytic ground-truth flow of a torsion.
pub fn torsion_flow(spec: &TorsionSpec, dims: Dims) -> FlowField {
    FlowField::from_fn(dims, |x, y, z| {
        spec.displacement([x as f64, y as f64, z as f64])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// Intensity depends on radius and height only.
    AngularConstant,
    /// Smooth band-limited noise added to the structural profile.
    Noise {
        seed: u64,
        amplitude: f64,
        correlation_length: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    /// LV centre (mid-height on the long axis), voxel coordinates.
    pub center: Vec3,
    /// Cavity radius (inner wall surface).
    pub inner_radius: f64,
    /// Outer wall radius.
    pub outer_radius: f64,
    /// Base-to-apex length of the outer surface.
    pub axial_length: f64,
    /// Axial depth of the ellipsoidal apex cap of the outer surface.
    pub apex_depth: f64,
    /// Relative amplitudes of the azimuthal harmonics 1, 2, 3, ... of the wall radius.
    pub lobes: Vec<f64>,
    /// How strongly each harmonic's amplitude and phase drift between apex
    /// and base, in [0, 1]. Zero gives a wall that is developable away from
    /// the caps, which intrinsic shape descriptors cannot orient.
    pub lobe_variation: f64,
    /// Seeds the harmonic phases.
    pub shape_seed: u64,
    pub texture: Texture,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: Dims::cube(64),
            center: [31.5, 31.5, 32.0],
            inner_radius: 8.0,
            outer_radius: 15.0,
            axial_length: 44.0,
            apex_depth: 14.0,
            lobes: vec![0.10, 0.08, 0.05],
            lobe_variation: 0.8,
            shape_seed: 0,
            texture: Texture::AngularConstant,
        }
    }
}

const BACKGROUND_LEVEL: f64 = 0.1;
const MYOCARDIUM_LEVEL: f64 = 0.5;
const CAVITY_LEVEL: f64 = 0.9;
/// Width of the logistic intensity transitions, voxels.
const EDGE_WIDTH: f64 = 0.6;
const NOISE_WAVES: usize = 48;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.min_axis() < 8 {
            return Err(Error::SpecOutOfBounds(format!("grid {:?} too small", d.as_array())));
        }
        if !(self.inner_radius > 0.0 && self.inner_radius < self.outer_radius) {
            return Err(Error::SpecOutOfBounds(format!(
                "need 0 < inner radius ({}) < outer radius ({})",
                self.inner_radius, self.outer_radius
            )));
        }
        let wall = self.outer_radius - self.inner_radius;
        if !(self.apex_depth > wall && self.apex_depth < self.axial_length) {
            return Err(Error::SpecOutOfBounds(format!(
                "apex depth {} must exceed the wall thickness {wall} and stay below the length",
                self.apex_depth
            )));
        }
        if !(0.0..=1.0).contains(&self.lobe_variation) {
            return Err(Error::SpecOutOfBounds(format!(
                "lobe variation {} outside [0, 1]",
                self.lobe_variation
            )));
        }
        let lobe_sum: f64 = self.lobes.iter().map(|a| a.abs()).sum::<f64>() * (1.0 + self.lobe_variation);
        if lobe_sum >= 0.5 {
            return Err(Error::SpecOutOfBounds(format!(
                "peak lobe amplitudes sum to {lobe_sum}, must stay below 0.5"
            )));
        }
        // one voxel of clearance around the outer surface
        let reach = self.outer_radius * (1.0 + lobe_sum) + 1.0;
        let half_len = 0.5 * self.axial_length + 1.0;
        let checks = [
            (self.center[0] - reach, self.center[0] + reach, d.nx),
            (self.center[1] - reach, self.center[1] + reach, d.ny),
            (self.center[2] - half_len, self.center[2] + half_len, d.nz),
        ];
        for (axis, (lo, hi, n)) in checks.into_iter().enumerate() {
            if lo < 0.0 || hi > (n - 1) as f64 {
                return Err(Error::SpecOutOfBounds(format!(
                    "axis {axis}: LV spans [{lo:.1}, {hi:.1}], grid is [0, {}]",
                    n - 1
                )));
            }
        }
        if let Texture::Noise {
            amplitude,
            correlation_length,
            ..
        } = self.texture
        {
            if !(amplitude >= 0.0 && correlation_length > 0.0) {
                return Err(Error::SpecOutOfBounds(
                    "noise needs amplitude >= 0 and correlation length > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Torsion about the LV long axis, centred `offset` voxels along it.
    /// The half height equals the LV length, so the net twist between base
    /// and apex is `angle_deg` when the centre is mid-cavity.
    pub fn torsion(&self, angle_deg: f64, offset: f64) -> TorsionSpec {
        TorsionSpec::about_z(
            angle_deg,
            add(self.center, [0.0, 0.0, offset]),
            self.axial_length,
        )
    }
}

/// A validated phantom with its derived random parameters.
#[derive(Debug, Clone)]
pub struct Phantom {
    spec: PhantomSpec,
    /// Per harmonic: phase, amplitude taper and phase drift over the length.
    lobes: Vec<(f64, f64, f64)>,
    waves: Vec<(Vec3, f64)>,
    noise_amplitude: f64,
}

impl Phantom {
    pub fn new(spec: PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.shape_seed);
        let v = spec.lobe_variation;
        let lobes = spec
            .lobes
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let phase = rng.random_range(0.0..2.0 * PI);
                let taper = v * rng.random_range(-1.0..=1.0);
                let drift = v * rng.random_range(-0.5 * PI..=0.5 * PI);
                // a varying first harmonic would shift slice centroids and tilt the axis
                if j == 0 {
                    (phase, 0.0, 0.0)
                } else {
                    (phase, taper, drift)
                }
            })
            .collect();
        let (waves, noise_amplitude) = match spec.texture {
            Texture::AngularConstant => (Vec::new(), 0.0),
            Texture::Noise {
                seed,
                amplitude,
                correlation_length,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let waves = (0..NOISE_WAVES)
                    .map(|_| {
                        let k: Vec3 = std::array::from_fn(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            g / correlation_length
                        });
                        (k, rng.random_range(0.0..2.0 * PI))
                    })
                    .collect();
                (waves, amplitude)
            }
        };
        Ok(Phantom {
            spec,
            lobes,
            waves,
            noise_amplitude,
        })
    }

    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    /// Wall radius factor at azimuth `phi` and axial offset `a`.
    fn modulation(&self, phi: f64, a: f64) -> f64 {
        let s = (a / (0.5 * self.spec.axial_length)).clamp(-1.0, 1.0);
        1.0 + self
            .spec
            .lobes
            .iter()
            .zip(&self.lobes)
            .enumerate()
            .map(|(j, (amp, (ph, taper, drift)))| {
                amp * (1.0 + taper * s) * ((j + 1) as f64 * phi + ph + drift * s).cos()
            })
            .sum::<f64>()
    }

    /// Approximate signed distance to a cup surface of the given radius
    /// (negative inside). The ellipsoidal apex shares its equator with the
    /// outer surface so the apical wall is as thick as the lateral wall.
    fn cup_distance(&self, rho: f64, a: f64, radius: f64, apex_depth: f64) -> f64 {
        let half = 0.5 * self.spec.axial_length;
        let equator = -half + self.spec.apex_depth;
        let rr = rho / radius;
        let (s, length) = if a >= equator {
            (rr, radius)
        } else {
            let t = (a - equator) / apex_depth;
            ((rr * rr + t * t).sqrt(), radius.min(apex_depth))
        };
        ((s - 1.0) * length).max(a - half)
    }

    /// Signed distances to the outer and inner (cavity) surfaces.
    fn surface_distances(&self, p: Vec3, modulated: bool) -> (f64, f64) {
        let q = sub(p, self.spec.center);
        let rho = q[0].hypot(q[1]);
        let m = if modulated {
            self.modulation(q[1].atan2(q[0]), q[2])
        } else {
            1.0
        };
        let wall = self.spec.outer_radius - self.spec.inner_radius;
        let outer = self.cup_distance(rho, q[2], self.spec.outer_radius * m, self.spec.apex_depth);
        let inner = self.cup_distance(
            rho,
            q[2],
            self.spec.inner_radius * m,
            self.spec.apex_depth - wall,
        );
        (outer, inner)
    }

    pub fn label_at(&self, p: Vec3) -> Label {
        let (outer, inner) = self.surface_distances(p, true);
        if inner < 0.0 {
            Label::Cavity
        } else if outer < 0.0 {
            Label::Myocardium
        } else {
            Label::Background
        }
    }

    fn noise_at(&self, p: Vec3) -> f64 {
        if self.waves.is_empty() {
            return 0.0;
        }
        let norm = (2.0 / self.waves.len() as f64).sqrt();
        self.noise_amplitude
            * norm
            * self.waves.iter().map(|(k, ph)| (dot(*k, p) + ph).cos()).sum::<f64>()
    }

    pub fn intensity_at(&self, p: Vec3) -> f64 {
        let angular = matches!(self.spec.texture, Texture::AngularConstant);
        let (outer, inner) = self.surface_distances(p, !angular);
        let logistic = |d: f64| 1.0 / (1.0 + (d / EDGE_WIDTH).exp());
        BACKGROUND_LEVEL
            + (MYOCARDIUM_LEVEL - BACKGROUND_LEVEL) * logistic(outer)
            + (CAVITY_LEVEL - MYOCARDIUM_LEVEL) * logistic(inner)
            + self.noise_at(p)
    }

    pub fn volume(&self) -> ScalarVolume {
        ScalarVolume::from_fn(self.spec.dims, |x, y, z| {
            self.intensity_at([x as f64, y as f64, z as f64])
        })
    }

    pub fn mask(&self) -> SegmentationMask {
        let d = self.spec.dims;
        let labels = d
            .voxels()
            .map(|(_, [x, y, z])| self.label_at([x as f64, y as f64, z as f64]))
            .collect();
        SegmentationMask::new(d, labels).expect("label count matches grid")
    }

    /// Systole/diastole pair with exact ground truth: every diastole voxel
    /// evaluates the analytic phantom at the inverse torsion of its centre.
    pub fn pair(&self, torsion: &TorsionSpec) -> Result<PhantomPair> {
        torsion.validate()?;
        let d = self.spec.dims;
        let (mut i2, mut labels2) = (Vec::with_capacity(d.len()), Vec::with_capacity(d.len()));
        for (_, [x, y, z]) in d.voxels() {
            let src = torsion.inverse([x as f64, y as f64, z as f64]);
            i2.push(self.intensity_at(src));
            labels2.push(self.label_at(src));
        }
        Ok(PhantomPair {
            systole: self.volume(),
            diastole: ScalarVolume::new(d, i2)?,
            systole_mask: self.mask(),
            diastole_mask: SegmentationMask::new(d, labels2)?,
            flow: torsion_flow(torsion, d),
            torsion: torsion.clone(),
        })
    }
}

/// One scan pair: images, masks and the analytic flow from systole to diastole.
#[derive(Debug, Clone)]
pub struct PhantomPair {
    pub systole: ScalarVolume,
    pub diastole: ScalarVolume,
    pub systole_mask: SegmentationMask,
    pub diastole_mask: SegmentationMask,
    pub flow: FlowField,
    pub torsion: TorsionSpec,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(ScalarVolume, SegmentationMask)> {
    let ph = Phantom::new(spec.clone())?;
    Ok((ph.volume(), ph.mask()))
}

/// Deforms an arbitrary volume/mask pair by backward sampling through the
/// inverse torsion: trilinear for intensities, nearest-neighbour for labels.
/// Negative angles are accepted so a reversed spec undoes a deformation.
pub fn apply_deformation(
    vol: &ScalarVolume,
    mask: &SegmentationMask,
    spec: &TorsionSpec,
) -> Result<(ScalarVolume, SegmentationMask)> {
    spec.validate_geometry()?;
    let d = vol.dims();
    d.ensure_same(&mask.dims())?;
    let mut data = Vec::with_capacity(d.len());
    let mut labels = Vec::with_capacity(d.len());
    for (_, [x, y, z]) in d.voxels() {
        let src = spec.inverse([x as f64, y as f64, z as f64]);
        data.push(trilinear_sample(vol, src));
        let clampi = |c: f64, n: usize| (c.round().max(0.0) as usize).min(n - 1);
        labels.push(mask.get(clampi(src[0], d.nx), clampi(src[1], d.ny), clampi(src[2], d.nz)));
    }
    Ok((
        ScalarVolume::with_spacing(d, data, vol.spacing())?,
        SegmentationMask::new(d, labels)?,
    ))
}
