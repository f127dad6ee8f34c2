//! Flow evaluation: endpoint and angular errors, and errors resolved along
//! a cylindrical frame around the LV long axis or along hull normals.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::extract_hull;
use crate::error::{Error, Result};
use crate::volgrid::{BinaryVolume, Dims, FlowField, Label, SegmentationMask, Vec3};

/// Vectors shorter than this are treated as having no direction.
pub const DEGENERATE_NORM: f64 = 1e-9;
/// Gaussian width used to smooth the LV indicator before taking normals.
pub const NORMAL_SIGMA: f64 = 1.5;

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn region_indices(dims: Dims, region: &BinaryVolume) -> Result<Vec<usize>> {
    dims.ensure_same(&region.dims())?;
    let idx = region.indices();
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(idx)
}

/// `pred − gt` voxel by voxel.
pub fn difference(pred: &FlowField, gt: &FlowField) -> Result<FlowField> {
    pred.dims().ensure_same(&gt.dims())?;
    let v = pred.vectors().iter().zip(gt.vectors()).map(|(a, b)| sub(*a, *b)).collect();
    FlowField::new(pred.dims(), v)
}

/// Mean endpoint error over `region`.
pub fn mepe(pred: &FlowField, gt: &FlowField, region: &BinaryVolume) -> Result<f64> {
    pred.dims().ensure_same(&gt.dims())?;
    let idx = region_indices(pred.dims(), region)?;
    let (p, g) = (pred.vectors(), gt.vectors());
    Ok(idx.iter().map(|&i| norm(sub(p[i], g[i]))).sum::<f64>() / idx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularError {
    /// Mean angle in radians over the voxels that were used.
    pub mean: f64,
    pub used: usize,
    /// Voxels where either vector is shorter than [`DEGENERATE_NORM`].
    pub excluded: usize,
}

pub fn angular_error(pred: &FlowField, gt: &FlowField, region: &BinaryVolume) -> Result<AngularError> {
    pred.dims().ensure_same(&gt.dims())?;
    let idx = region_indices(pred.dims(), region)?;
    let (p, g) = (pred.vectors(), gt.vectors());
    let (mut sum, mut used) = (0.0, 0usize);
    for &i in &idx {
        let (np, ng) = (norm(p[i]), norm(g[i]));
        if np < DEGENERATE_NORM || ng < DEGENERATE_NORM {
            continue;
        }
        sum += (dot(p[i], g[i]) / (np * ng)).clamp(-1.0, 1.0).acos();
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllDegenerate);
    }
    Ok(AngularError {
        mean: sum / used as f64,
        used,
        excluded: idx.len() - used,
    })
}

/// Long axis of the LV region: unit direction and the voxel centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongAxis {
    pub direction: Vec3,
    pub centroid: Vec3,
}

/// First principal component of the LV voxel coordinates, pointing into
/// the +z hemisphere (ties broken toward +y, then +x).
pub fn longitudinal_axis(mask: &SegmentationMask) -> Result<LongAxis> {
    let d = mask.dims();
    let pts: Vec<Vector3<f64>> = mask
        .lv_voxels()
        .indices()
        .into_iter()
        .map(|i| {
            let [x, y, z] = d.coords(i);
            Vector3::new(x as f64, y as f64, z as f64)
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateGeometry(format!("{} LV voxels", pts.len())));
    }
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let q = p - centroid;
        acc + q * q.transpose()
    }) / pts.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if l1 - l2 <= 1e-9 * l1.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateGeometry(format!(
            "principal direction not unique (eigenvalues {l1:.6e}, {l2:.6e})"
        )));
    }
    let v = eig.eigenvectors.column(order[0]).normalize();
    let mut dir = [v[0], v[1], v[2]];
    let flip = dir[2] < 0.0 || (dir[2] == 0.0 && (dir[1] < 0.0 || (dir[1] == 0.0 && dir[0] < 0.0)));
    if flip {
        dir = scale(dir, -1.0);
    }
    Ok(LongAxis {
        direction: dir,
        centroid: [centroid.x, centroid.y, centroid.z],
    })
}

/// Per-voxel flow components in the frame (r̂, ĉ, ℓ̂) around the long axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalComponents {
    pub voxels: Vec<usize>,
    pub radial: Vec<f64>,
    pub circumferential: Vec<f64>,
    pub longitudinal: Vec<f64>,
    /// Voxels on the axis, where r̂ is undefined; their radial and
    /// circumferential entries are 0.
    pub on_axis: Vec<bool>,
}

pub fn decompose_cylindrical(flow: &FlowField, axis: &LongAxis, region: &BinaryVolume) -> Result<CylindricalComponents> {
    let l = axis.direction;
    if (norm(l) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidData(format!("axis {l:?} is not unit length")));
    }
    let d = flow.dims();
    let voxels = region_indices(d, region)?;
    let rows: Vec<(f64, f64, f64, bool)> = voxels
        .par_iter()
        .map(|&i| {
            let [x, y, z] = d.coords(i);
            let q = sub([x as f64, y as f64, z as f64], axis.centroid);
            let radial = sub(q, scale(l, dot(q, l)));
            let u = flow.vectors()[i];
            let along = dot(u, l);
            let rn = norm(radial);
            if rn < DEGENERATE_NORM {
                return (0.0, 0.0, along, true);
            }
            let r = scale(radial, 1.0 / rn);
            (dot(u, r), dot(u, cross(l, r)), along, false)
        })
        .collect();
    Ok(CylindricalComponents {
        voxels,
        radial: rows.iter().map(|r| r.0).collect(),
        circumferential: rows.iter().map(|r| r.1).collect(),
        longitudinal: rows.iter().map(|r| r.2).collect(),
        on_axis: rows.iter().map(|r| r.3).collect(),
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with zero padding outside the grid.
fn blur(data: &[f64], d: Dims, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let strides = [1, d.nx, d.nx * d.ny];
    let lens = d.as_array();
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let (s, n) = (strides[axis], lens[axis] as i64);
        cur = (0..cur.len())
            .into_par_iter()
            .map(|i| {
                let c = ((i / s) % n as usize) as i64;
                kernel
                    .iter()
                    .enumerate()
                    .filter_map(|(k, w)| {
                        let j = c + k as i64 - r;
                        (0..n).contains(&j).then(|| w * cur[(i as i64 + (j - c) * s as i64) as usize])
                    })
                    .sum()
            })
            .collect();
    }
    cur
}

/// Outward unit normals of the LV region at every voxel: the negated,
/// normalised central gradient of the Gaussian-blurred LV indicator.
/// `None` where the gradient is shorter than [`DEGENERATE_NORM`].
pub fn lv_normals(mask: &SegmentationMask) -> Vec<Option<Vec3>> {
    let d = mask.dims();
    let ind: Vec<f64> = mask.labels().iter().map(|l| if l.is_lv() { 1.0 } else { 0.0 }).collect();
    let b = blur(&ind, d, &gaussian_kernel(NORMAL_SIGMA));
    let at = |x: i64, y: i64, z: i64| d.checked_index(x, y, z).map_or(0.0, |i| b[i]);
    (0..d.len())
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = d.coords(i).map(|c| c as i64);
            let g = [
                (at(x + 1, y, z) - at(x - 1, y, z)) / 2.0,
                (at(x, y + 1, z) - at(x, y - 1, z)) / 2.0,
                (at(x, y, z + 1) - at(x, y, z - 1)) / 2.0,
            ];
            let n = norm(g);
            (n >= DEGENERATE_NORM).then(|| scale(g, -1.0 / n))
        })
        .collect()
}

/// Per-voxel flow split along hull normals.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalComponents {
    pub voxels: Vec<usize>,
    /// `flow · n̂`.
    pub radial: Vec<f64>,
    /// `‖flow − (flow · n̂) n̂‖`.
    pub tangential: Vec<f64>,
    /// Hull voxels without a usable normal.
    pub excluded: usize,
}

pub fn local_decompose(flow: &FlowField, hull: &BinaryVolume, normals: &[Option<Vec3>]) -> Result<LocalComponents> {
    let d = flow.dims();
    if normals.len() != d.len() {
        return Err(Error::InvalidData(format!("{} normals for {} voxels", normals.len(), d.len())));
    }
    let idx = region_indices(d, hull)?;
    let mut out = LocalComponents {
        voxels: Vec::with_capacity(idx.len()),
        radial: Vec::with_capacity(idx.len()),
        tangential: Vec::with_capacity(idx.len()),
        excluded: 0,
    };
    for i in idx {
        let Some(n) = normals[i] else {
            out.excluded += 1;
            continue;
        };
        let u = flow.vectors()[i];
        let r = dot(u, n);
        out.voxels.push(i);
        out.radial.push(r);
        out.tangential.push(norm(sub(u, scale(n, r))));
    }
    if out.voxels.is_empty() {
        return Err(Error::AllDegenerate);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// All evaluation numbers for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mepe_myo: f64,
    /// `None` when every myocardium voxel has a degenerate vector.
    pub angular_myo: Option<f64>,
    pub mepe_radial: f64,
    pub mepe_circumferential: f64,
    pub mepe_longitudinal: f64,
    pub mepe_local_radial: f64,
    pub mepe_local_tangential: f64,
    /// Mean ground-truth tangential magnitude on the hull, the scale for
    /// `mepe_local_tangential`.
    pub gt_local_tangential: f64,
    pub myocardium_voxels: usize,
    pub angular_excluded: usize,
    pub on_axis_voxels: usize,
    pub hull_voxels: usize,
    pub normal_excluded: usize,
}

/// Geometry derived from a segmentation, reusable across predictions.
#[derive(Debug, Clone)]
pub struct Evaluator {
    myocardium: BinaryVolume,
    axis: LongAxis,
    hull: BinaryVolume,
    normals: Vec<Option<Vec3>>,
}

impl Evaluator {
    pub fn new(mask: &SegmentationMask) -> Result<Self> {
        let myocardium = mask.select(Label::Myocardium);
        if myocardium.is_all_unset() {
            return Err(Error::EmptyRegion);
        }
        Ok(Evaluator {
            myocardium,
            axis: longitudinal_axis(mask)?,
            hull: extract_hull(mask)?,
            normals: lv_normals(mask),
        })
    }

    pub fn axis(&self) -> &LongAxis {
        &self.axis
    }

    pub fn hull(&self) -> &BinaryVolume {
        &self.hull
    }

    pub fn myocardium(&self) -> &BinaryVolume {
        &self.myocardium
    }

    /// Normal/tangential split of any flow on the hull.
    pub fn local(&self, flow: &FlowField) -> Result<LocalComponents> {
        local_decompose(flow, &self.hull, &self.normals)
    }

    pub fn report(&self, pred: &FlowField, gt: &FlowField) -> Result<MetricReport> {
        let diff = difference(pred, gt)?;
        diff.dims().ensure_same(&self.myocardium.dims())?;
        let angular = match angular_error(pred, gt, &self.myocardium) {
            Ok(a) => Some(a),
            Err(Error::AllDegenerate) => None,
            Err(e) => return Err(e),
        };
        let cyl = decompose_cylindrical(&diff, &self.axis, &self.myocardium)?;
        let local = self.local(&diff)?;
        let gt_local = self.local(gt)?;
        Ok(MetricReport {
            mepe_myo: mepe(pred, gt, &self.myocardium)?,
            angular_myo: angular.map(|a| a.mean),
            mepe_radial: mean(cyl.radial.iter().map(|v| v.abs())),
            mepe_circumferential: mean(cyl.circumferential.iter().map(|v| v.abs())),
            mepe_longitudinal: mean(cyl.longitudinal.iter().map(|v| v.abs())),
            mepe_local_radial: mean(local.radial.iter().map(|v| v.abs())),
            mepe_local_tangential: mean(local.tangential.iter().copied()),
            gt_local_tangential: mean(gt_local.tangential.iter().copied()),
            myocardium_voxels: cyl.voxels.len(),
            angular_excluded: angular.map_or(cyl.voxels.len(), |a| a.excluded),
            on_axis_voxels: cyl.on_axis.iter().filter(|&&b| b).count(),
            hull_voxels: local.voxels.len() + local.excluded,
            normal_excluded: local.excluded,
        })
    }
}

/// One-shot evaluation of `pred` against `gt` over the mask's myocardium
/// and LV hull.
pub fn full_report(pred: &FlowField, gt: &FlowField, mask: &SegmentationMask) -> Result<MetricReport> {
    Evaluator::new(mask)?.report(pred, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{Phantom, PhantomSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_flow(rng: &mut ChaCha8Rng, d: Dims) -> FlowField {
        FlowField::from_fn(d, |_, _, _| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
    }

    #[test]
    fn mepe_examples() {
        let d = Dims::cube(4);
        let all = BinaryVolume::from_fn(d, |_, _, _| true);
        let g = FlowField::constant(d, [1.0, 2.0, 3.0]);
        assert_eq!(mepe(&g, &g, &all).unwrap(), 0.0);
        let p = FlowField::constant(d, [4.0, 6.0, 3.0]);
        assert_eq!(mepe(&p, &g, &all).unwrap(), 5.0);
        assert!(matches!(mepe(&p, &g, &BinaryVolume::empty(d)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn angular_examples() {
        let d = Dims::cube(3);
        let all = BinaryVolume::from_fn(d, |_, _, _| true);
        let g = FlowField::constant(d, [1.0, -2.0, 0.5]);
        assert!(angular_error(&g, &g, &all).unwrap().mean.abs() < 1e-7);
        let neg = FlowField::constant(d, [-1.0, 2.0, -0.5]);
        assert!((angular_error(&neg, &g, &all).unwrap().mean - PI).abs() < 1e-12);
        let perp = FlowField::constant(d, [2.0, 1.0, 0.0]);
        assert!((angular_error(&perp, &g, &all).unwrap().mean - PI / 2.0).abs() < 1e-12);
        let mut half = g.clone();
        half.vectors_mut()[0] = [0.0; 3];
        let a = angular_error(&neg, &half, &all).unwrap();
        assert_eq!((a.used, a.excluded), (26, 1));
        let zero = FlowField::zeros(d);
        assert!(matches!(angular_error(&zero, &g, &all), Err(Error::AllDegenerate)));
    }

    fn mask_from(d: Dims, lv: impl Fn(usize, usize, usize) -> bool) -> SegmentationMask {
        let mut m = SegmentationMask::background(d);
        for (_, [x, y, z]) in d.voxels() {
            if lv(x, y, z) {
                m.set(x, y, z, Label::Myocardium);
            }
        }
        m
    }

    #[test]
    fn axis_of_a_line_and_degenerate_sets() {
        let d = Dims::cube(8);
        let ax = longitudinal_axis(&mask_from(d, |x, y, _| x == 3 && y == 4)).unwrap();
        assert!((ax.direction[2] - 1.0).abs() < 1e-12);
        assert!((ax.centroid[0] - 3.0).abs() < 1e-12 && (ax.centroid[2] - 3.5).abs() < 1e-12);
        let single = mask_from(d, |x, y, z| (x, y, z) == (1, 1, 1));
        assert!(matches!(longitudinal_axis(&single), Err(Error::DegenerateGeometry(_))));
        // a cube has no preferred direction
        let cube = mask_from(d, |x, y, z| x < 4 && y < 4 && z < 4);
        assert!(matches!(longitudinal_axis(&cube), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn upright_phantom_axis_is_vertical() {
        let ph = Phantom::new(PhantomSpec::default()).unwrap();
        let ax = longitudinal_axis(&ph.mask()).unwrap();
        let angle = ax.direction[2].clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() < 2.0, "{}", angle.to_degrees());
    }

    #[test]
    fn cylindrical_frame_of_a_rotation() {
        let d = Dims::cube(9);
        let axis = LongAxis {
            direction: [0.0, 0.0, 1.0],
            centroid: [4.0, 4.0, 4.0],
        };
        let theta = 0.1_f64;
        // rigid rotation about the axis: displacement R(q) − q
        let flow = FlowField::from_fn(d, |x, y, _| {
            let (qx, qy) = (x as f64 - 4.0, y as f64 - 4.0);
            [qx * theta.cos() - qy * theta.sin() - qx, qx * theta.sin() + qy * theta.cos() - qy, 0.0]
        });
        let all = BinaryVolume::from_fn(d, |_, _, _| true);
        let c = decompose_cylindrical(&flow, &axis, &all).unwrap();
        for (k, &i) in c.voxels.iter().enumerate() {
            let [x, y, _] = d.coords(i);
            let rho = ((x as f64 - 4.0).powi(2) + (y as f64 - 4.0).powi(2)).sqrt();
            assert_eq!(c.on_axis[k], rho == 0.0);
            assert!((c.circumferential[k] - rho * theta.sin()).abs() < 1e-12);
            assert!((c.radial[k] - rho * (theta.cos() - 1.0)).abs() < 1e-12);
            assert_eq!(c.longitudinal[k], 0.0);
        }
        let along = FlowField::constant(d, [0.0, 0.0, 2.0]);
        let c = decompose_cylindrical(&along, &axis, &all).unwrap();
        assert!(c.radial.iter().chain(&c.circumferential).all(|v| v.abs() < 1e-15));
        let bad = LongAxis {
            direction: [0.0, 0.0, 2.0],
            ..axis
        };
        assert!(decompose_cylindrical(&along, &bad, &all).is_err());
    }

    #[test]
    fn local_examples() {
        let d = Dims::cube(3);
        let hull = BinaryVolume::from_fn(d, |x, _, _| x == 1);
        let n = [0.6, 0.8, 0.0];
        let mut normals = vec![Some(n); d.len()];
        normals[d.index(1, 0, 0)] = None;
        let par = FlowField::constant(d, scale(n, 2.0));
        let l = local_decompose(&par, &hull, &normals).unwrap();
        assert_eq!((l.voxels.len(), l.excluded), (8, 1));
        assert!(l.tangential.iter().all(|t| t.abs() < 1e-15));
        assert!(l.radial.iter().all(|r| (r - 2.0).abs() < 1e-15));
        let perp = FlowField::constant(d, [-0.8, 0.6, 1.0]);
        let l = local_decompose(&perp, &hull, &normals).unwrap();
        assert!(l.radial.iter().all(|r| r.abs() < 1e-15));
        assert!(l.tangential.iter().all(|t| (t - 2f64.sqrt()).abs() < 1e-15));
        assert!(matches!(local_decompose(&perp, &hull, &vec![None; d.len()]), Err(Error::AllDegenerate)));
    }

    #[test]
    fn sphere_normals_point_outward() {
        let d = Dims::cube(24);
        let c = 11.5;
        let mask = mask_from(d, |x, y, z| {
            (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2) <= 49.0
        });
        let normals = lv_normals(&mask);
        let hull = extract_hull(&mask).unwrap();
        for i in hull.indices() {
            let [x, y, z] = d.coords(i);
            let r = [x as f64 - c, y as f64 - c, z as f64 - c];
            let n = normals[i].unwrap();
            assert!((norm(n) - 1.0).abs() < 1e-12);
            let cos = dot(n, r) / norm(r);
            assert!(cos > 0.97, "{:?} {cos}", [x, y, z]);
        }
    }

    #[test]
    fn report_of_exact_and_shifted_prediction() {
        let ph = Phantom::new(PhantomSpec::default()).unwrap();
        let pair = ph.pair(&ph.spec().torsion(20.0, 0.0)).unwrap();
        let ev = Evaluator::new(&pair.systole_mask).unwrap();
        let r = ev.report(&pair.flow, &pair.flow).unwrap();
        assert_eq!(r.mepe_myo, 0.0);
        assert_eq!(r.mepe_local_tangential, 0.0);
        assert!(r.angular_myo.unwrap() < 1e-6);
        let shifted = FlowField::from_fn(pair.flow.dims(), |x, y, z| {
            let u = pair.flow.get(x, y, z);
            [u[0] + 1.0, u[1], u[2]]
        });
        let r = ev.report(&shifted, &pair.flow).unwrap();
        assert!((r.mepe_myo - 1.0).abs() < 1e-12);
        // zero ground truth everywhere: angular error is undefined
        let z = FlowField::zeros(pair.flow.dims());
        let r = ev.report(&z, &z).unwrap();
        assert_eq!(r.angular_myo, None);
        assert_eq!(r.angular_excluded, r.myocardium_voxels);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mepe_triangle_inequality(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dims::new(4, 5, 3);
            let region = BinaryVolume::from_fn(d, |x, y, _| (x + y) % 3 != 0);
            let (a, b, c) = (random_flow(&mut rng, d), random_flow(&mut rng, d), random_flow(&mut rng, d));
            let ac = mepe(&a, &c, &region).unwrap();
            let ab = mepe(&a, &b, &region).unwrap();
            let bc = mepe(&b, &c, &region).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn angular_error_ignores_positive_rescaling(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dims::cube(3);
            let all = BinaryVolume::from_fn(d, |_, _, _| true);
            let (a, b) = (random_flow(&mut rng, d), random_flow(&mut rng, d));
            let scaled = FlowField::new(d, a.vectors().iter().map(|v| scale(*v, rng.random_range(0.01..100.0))).collect()).unwrap();
            let e1 = angular_error(&a, &b, &all).unwrap().mean;
            let e2 = angular_error(&scaled, &b, &all).unwrap().mean;
            prop_assert!((e1 - e2).abs() < 1e-7);
        }
    }
}
