use super::{Dims, ScalarVolume, Vec3};
use crate::error::Result;

/// Cell origin, fractional offset and in-range flag for one axis.
/// Coordinates are clamped to `[0, n - 1]`.
#[inline]
fn axis_cell(c: f64, n: usize) -> (usize, f64, bool) {
    if n == 1 {
        return (0, 0.0, false);
    }
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&c);
    let c = c.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, c - i0 as f64, inside)
}

#[inline]
fn corners(data: &[f64], d: Dims, x0: usize, y0: usize, z0: usize) -> [f64; 8] {
    let sx = usize::from(d.nx > 1);
    let sy = if d.ny > 1 { d.nx } else { 0 };
    let sz = if d.nz > 1 { d.nx * d.ny } else { 0 };
    let i = d.index(x0, y0, z0);
    [
        data[i],
        data[i + sx],
        data[i + sy],
        data[i + sx + sy],
        data[i + sz],
        data[i + sx + sz],
        data[i + sy + sz],
        data[i + sx + sy + sz],
    ]
}

/// Trilinear interpolation on a raw x-fastest buffer with boundary clamping.
#[inline]
pub(crate) fn sample_raw(data: &[f64], d: Dims, p: Vec3) -> f64 {
    let (x0, tx, _) = axis_cell(p[0], d.nx);
    let (y0, ty, _) = axis_cell(p[1], d.ny);
    let (z0, tz, _) = axis_cell(p[2], d.nz);
    let c = corners(data, d, x0, y0, z0);
    let c00 = c[0] + tx * (c[1] - c[0]);
    let c10 = c[2] + tx * (c[3] - c[2]);
    let c01 = c[4] + tx * (c[5] - c[4]);
    let c11 = c[6] + tx * (c[7] - c[6]);
    let c0 = c00 + ty * (c10 - c00);
    let c1 = c01 + ty * (c11 - c01);
    c0 + tz * (c1 - c0)
}

/// Value and spatial gradient of the trilinear interpolant. Clamped axes have
/// zero derivative.
#[inline]
pub(crate) fn sample_grad_raw(data: &[f64], d: Dims, p: Vec3) -> (f64, Vec3) {
    let (x0, tx, ix) = axis_cell(p[0], d.nx);
    let (y0, ty, iy) = axis_cell(p[1], d.ny);
    let (z0, tz, iz) = axis_cell(p[2], d.nz);
    let c = corners(data, d, x0, y0, z0);
    let (ux, uy, uz) = (1.0 - tx, 1.0 - ty, 1.0 - tz);

    let c00 = ux * c[0] + tx * c[1];
    let c10 = ux * c[2] + tx * c[3];
    let c01 = ux * c[4] + tx * c[5];
    let c11 = ux * c[6] + tx * c[7];
    let c0 = uy * c00 + ty * c10;
    let c1 = uy * c01 + ty * c11;
    let value = uz * c0 + tz * c1;

    let gx = if ix {
        let d00 = c[1] - c[0];
        let d10 = c[3] - c[2];
        let d01 = c[5] - c[4];
        let d11 = c[7] - c[6];
        uz * (uy * d00 + ty * d10) + tz * (uy * d01 + ty * d11)
    } else {
        0.0
    };
    let gy = if iy { uz * (c10 - c00) + tz * (c11 - c01) } else { 0.0 };
    let gz = if iz { c1 - c0 } else { 0.0 };
    (value, [gx, gy, gz])
}

/// Trilinear interpolation of the 8 surrounding voxels. Positions outside
/// `[0, n - 1]` on any axis are clamped to the boundary.
pub fn trilinear_sample(vol: &ScalarVolume, p: Vec3) -> f64 {
    sample_raw(vol.data(), vol.dims(), p)
}

/// Analytic gradient of the trilinear interpolant at `p`.
pub fn trilinear_gradient(vol: &ScalarVolume, p: Vec3) -> Vec3 {
    sample_grad_raw(vol.data(), vol.dims(), p).1
}

/// Central differences in the interior, one-sided differences on the faces.
pub fn central_gradient(vol: &ScalarVolume) -> Result<[ScalarVolume; 3]> {
    let d = vol.dims();
    d.ensure_min_axis(3)?;
    let data = vol.data();
    let n = [d.nx, d.ny, d.nz];
    let strides = [1, d.nx, d.nx * d.ny];
    let mut out: [Vec<f64>; 3] = Default::default();
    for axis in 0..3 {
        let s = strides[axis];
        out[axis] = (0..d.len())
            .map(|i| {
                let c = d.coords(i)[axis];
                if c == 0 {
                    data[i + s] - data[i]
                } else if c == n[axis] - 1 {
                    data[i] - data[i - s]
                } else {
                    0.5 * (data[i + s] - data[i - s])
                }
            })
            .collect();
    }
    let [gx, gy, gz] = out;
    Ok([
        ScalarVolume::from_raw(d, gx),
        ScalarVolume::from_raw(d, gy),
        ScalarVolume::from_raw(d, gz),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(d: Dims, seed: u64) -> ScalarVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarVolume::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0))
    }

    /// Independent 8-corner weighted sum.
    fn brute_trilinear(vol: &ScalarVolume, p: Vec3) -> f64 {
        let (x0, y0, z0) = (p[0].floor(), p[1].floor(), p[2].floor());
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let (cx, cy, cz) = (x0 + dx as f64, y0 + dy as f64, z0 + dz as f64);
                    let w = (1.0 - (p[0] - cx).abs())
                        * (1.0 - (p[1] - cy).abs())
                        * (1.0 - (p[2] - cz).abs());
                    if w > 0.0 {
                        acc += w * vol.get(cx as usize, cy as usize, cz as usize);
                    }
                }
            }
        }
        acc
    }

    #[test]
    fn constant_volume_samples_constant() {
        let v = ScalarVolume::filled(Dims::cube(4), 5.0);
        assert_eq!(trilinear_sample(&v, [1.3, 2.7, 0.5]), 5.0);
    }

    #[test]
    fn ramp_is_exact() {
        let v = ScalarVolume::from_fn(Dims::cube(4), |x, _, _| x as f64);
        assert!((trilinear_sample(&v, [1.5, 0.0, 0.0]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_corner_sum() {
        let v = random_volume(Dims::cube(4), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = [
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..3.0),
            ];
            assert!((trilinear_sample(&v, p) - brute_trilinear(&v, p)).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_coordinates_return_stored_voxel() {
        let v = random_volume(Dims::new(5, 4, 3), 3);
        for (i, [x, y, z]) in v.dims().voxels() {
            assert_eq!(
                trilinear_sample(&v, [x as f64, y as f64, z as f64]),
                v.data()[i]
            );
        }
    }

    #[test]
    fn out_of_bounds_clamps() {
        let v = random_volume(Dims::cube(4), 9);
        assert_eq!(trilinear_sample(&v, [-3.0, 0.0, 0.0]), v.get(0, 0, 0));
        assert_eq!(trilinear_sample(&v, [9.0, 3.0, 7.0]), v.get(3, 3, 3));
    }

    #[test]
    fn gradient_matches_finite_difference_inside_cells() {
        let v = random_volume(Dims::cube(5), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p: Vec3 = std::array::from_fn(|_| rng.random_range(0.1..3.9));
            let (_, g) = sample_grad_raw(v.data(), v.dims(), p);
            for a in 0..3 {
                let h = 1e-6;
                let mut pp = p;
                let mut pm = p;
                pp[a] += h;
                pm[a] -= h;
                let fd = (trilinear_sample(&v, pp) - trilinear_sample(&v, pm)) / (2.0 * h);
                assert!((fd - g[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", g[a]);
            }
        }
    }

    #[test]
    fn gradient_of_linear_ramp() {
        let v = ScalarVolume::from_fn(Dims::cube(6), |x, _, _| 2.0 * x as f64);
        let [gx, gy, gz] = central_gradient(&v).unwrap();
        assert!(gx.data().iter().all(|&g| (g - 2.0).abs() < 1e-12));
        assert!(gy.data().iter().chain(gz.data()).all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let v = ScalarVolume::filled(Dims::cube(4), 3.0);
        let g = central_gradient(&v).unwrap();
        assert!(g.iter().all(|c| c.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn gradient_of_square_interior() {
        let v = ScalarVolume::from_fn(Dims::cube(6), |x, _, _| (x * x) as f64);
        let [gx, _, _] = central_gradient(&v).unwrap();
        assert_eq!(gx.get(3, 2, 2), 6.0);
    }

    #[test]
    fn gradient_of_affine_field_is_its_coefficients() {
        let v = ScalarVolume::from_fn(Dims::new(5, 6, 7), |x, y, z| {
            0.5 * x as f64 - 1.25 * y as f64 + 3.0 * z as f64 + 2.0
        });
        let g = central_gradient(&v).unwrap();
        for (c, want) in g.iter().zip([0.5, -1.25, 3.0]) {
            assert!(c.data().iter().all(|&x| (x - want).abs() < 1e-12));
        }
    }

    #[test]
    fn small_dims_rejected() {
        let v = ScalarVolume::filled(Dims::new(2, 5, 5), 1.0);
        assert!(matches!(
            central_gradient(&v),
            Err(crate::Error::DimsTooSmall { .. })
        ));
    }
}
