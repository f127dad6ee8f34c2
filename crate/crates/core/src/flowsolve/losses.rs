//! Loss terms and their analytic gradients with respect to the flow.
//!
//! Photometric terms compare `warped(p) = moving(p + flow(p))` against the
//! fixed target; their flow gradient is `∂L/∂warped(p) · ∇moving(p + flow(p))`.
//! Reductions are sequential so results do not depend on thread count.

use crate::constraints::ConstraintField;
use crate::error::Result;
use crate::volgrid::{sample_grad_raw, sample_raw, BinaryVolume, Dims, FlowField, ScalarVolume, Vec3};

/// Charbonnier smoothing of the photometric L1 term.
pub const CHARBONNIER_EPS: f64 = 1e-3;
/// Side of the cubic SSIM window.
pub const SSIM_WINDOW: usize = 3;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_dims(a: Dims, b: Dims) -> Result<()> {
    a.ensure_same(&b)
}

/// Samples `data` at `p + flow(p)` for every voxel.
pub(crate) fn warp_raw(data: &[f64], d: Dims, flow: &[Vec3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(flow.len());
    for_each_voxel(d, |i, p| {
        let u = flow[i];
        out.push(sample_raw(data, d, [p[0] + u[0], p[1] + u[1], p[2] + u[2]]));
    });
    out
}

/// Warped values and the moving image's spatial gradient at the sample points.
pub(crate) fn warp_grad_raw(data: &[f64], d: Dims, flow: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
    let mut vals = Vec::with_capacity(flow.len());
    let mut grads = Vec::with_capacity(flow.len());
    for_each_voxel(d, |i, p| {
        let u = flow[i];
        let (v, g) = sample_grad_raw(data, d, [p[0] + u[0], p[1] + u[1], p[2] + u[2]]);
        vals.push(v);
        grads.push(g);
    });
    (vals, grads)
}

/// Visits voxels in storage order with their coordinates.
#[inline]
fn for_each_voxel(d: Dims, mut f: impl FnMut(usize, [f64; 3])) {
    let mut i = 0;
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                f(i, [x as f64, y as f64, z as f64]);
                i += 1;
            }
        }
    }
}

/// `out(p) = vol(p + flow(p))`, trilinear with clamping.
pub fn warp(vol: &ScalarVolume, flow: &FlowField) -> Result<ScalarVolume> {
    check_dims(vol.dims(), flow.dims())?;
    Ok(ScalarVolume::from_raw(vol.dims(), warp_raw(vol.data(), vol.dims(), flow.vectors())))
}

/// Mean absolute difference.
pub fn loss_l1(warped: &ScalarVolume, target: &ScalarVolume) -> Result<f64> {
    check_dims(warped.dims(), target.dims())?;
    let n = warped.data().len() as f64;
    Ok(warped.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Charbonnier value and `∂L/∂warped` of `mean(sqrt(d² + ε²) − ε)`.
pub(crate) fn charbonnier_raw(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let e2 = CHARBONNIER_EPS * CHARBONNIER_EPS;
    let mut total = 0.0;
    let grads = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            let r = (d * d + e2).sqrt();
            total += r - CHARBONNIER_EPS;
            d / (r * n)
        })
        .collect();
    (total / n, grads)
}

/// Charbonnier-smoothed L1, the form used inside the solver.
pub fn loss_l1_smooth(warped: &ScalarVolume, target: &ScalarVolume) -> Result<f64> {
    check_dims(warped.dims(), target.dims())?;
    Ok(charbonnier_raw(warped.data(), target.data()).0)
}

/// Zero-padded 3×3×3 box sum.
fn box3(data: &[f64], d: Dims) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    let strides = [1, d.nx, d.nx * d.ny];
    let lens = [d.nx, d.ny, d.nz];
    for axis in 0..3 {
        let (s, n) = (strides[axis], lens[axis]);
        // each line along `axis` starts at an index whose `axis` coordinate is 0
        let block = s * n;
        for base in (0..cur.len()).step_by(block) {
            for off in 0..s {
                let start = base + off;
                let mut prev = 0.0;
                let mut here = cur[start];
                for c in 0..n {
                    let i = start + c * s;
                    let ahead = if c + 1 < n { cur[i + s] } else { 0.0 };
                    next[i] = prev + here + ahead;
                    prev = here;
                    here = ahead;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Per-level SSIM statistics of the fixed image.
#[derive(Debug, Clone)]
pub(crate) struct SsimTarget {
    dims: Dims,
    y: Vec<f64>,
    mu_y: Vec<f64>,
    e_yy: Vec<f64>,
    centers: Vec<usize>,
    c1: f64,
    c2: f64,
}

impl SsimTarget {
    pub(crate) fn new(target: &ScalarVolume) -> Result<Self> {
        let d = target.dims();
        d.ensure_min_axis(SSIM_WINDOW)?;
        let range = target.range();
        let l = if range > 1e-12 { range } else { 1.0 };
        let y = target.data().to_vec();
        let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
        let centers = d
            .voxels()
            .filter(|(_, [x, yy, z])| {
                (1..d.nx - 1).contains(x) && (1..d.ny - 1).contains(yy) && (1..d.nz - 1).contains(z)
            })
            .map(|(i, _)| i)
            .collect();
        Ok(SsimTarget {
            dims: d,
            mu_y: box3(&y, d).iter().map(|s| s / 27.0).collect(),
            e_yy: box3(&sq, d).iter().map(|s| s / 27.0).collect(),
            y,
            centers,
            c1: (SSIM_K1 * l).powi(2),
            c2: (SSIM_K2 * l).powi(2),
        })
    }

    /// `1 − mean SSIM` over window centres and, optionally, `∂L/∂x`.
    pub(crate) fn loss(&self, x: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let d = self.dims;
        let xy: Vec<f64> = x.iter().zip(&self.y).map(|(a, b)| a * b).collect();
        let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
        let mu_x = box3(x, d);
        let e_xx = box3(&xx, d);
        let e_xy = box3(&xy, d);
        let nc = self.centers.len() as f64;
        let mut alpha = vec![0.0; if want_grad { x.len() } else { 0 }];
        let mut beta = alpha.clone();
        let mut gamma = alpha.clone();
        let mut total = 0.0;
        for &i in &self.centers {
            let (mx, my) = (mu_x[i] / 27.0, self.mu_y[i]);
            let sxx = e_xx[i] / 27.0 - mx * mx;
            let syy = self.e_yy[i] - my * my;
            let sxy = e_xy[i] / 27.0 - mx * my;
            let a1 = 2.0 * mx * my + self.c1;
            let a2 = 2.0 * sxy + self.c2;
            let b1 = mx * mx + my * my + self.c1;
            let b2 = sxx + syy + self.c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                alpha[i] = 2.0 * my * (a2 - a1) / (b1 * b2) + 2.0 * mx * s * (1.0 / b2 - 1.0 / b1);
                beta[i] = -s / b2;
                gamma[i] = 2.0 * s / a2;
            }
        }
        let loss = 1.0 - total / nc;
        if !want_grad {
            return (loss, None);
        }
        let (sa, sb, sg) = (box3(&alpha, d), box3(&beta, d), box3(&gamma, d));
        let k = -1.0 / (27.0 * nc);
        let grad = (0..x.len())
            .map(|q| k * (sa[q] + 2.0 * x[q] * sb[q] + self.y[q] * sg[q]))
            .collect();
        (loss, Some(grad))
    }
}

/// `1 − mean local SSIM` over 3×3×3 windows fully inside the grid, with
/// stabilisers from the target's dynamic range.
pub fn loss_ssim(warped: &ScalarVolume, target: &ScalarVolume) -> Result<f64> {
    check_dims(warped.dims(), target.dims())?;
    Ok(SsimTarget::new(target)?.loss(warped.data(), false).0)
}

/// Sum over valid voxels of `‖flow − constraint‖₁` and its subgradient
/// (zero at exact agreement).
pub(crate) fn constraints_raw(flow: &[Vec3], cf: &ConstraintField) -> (f64, Vec<Vec3>) {
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; flow.len()];
    for (i, (u, k)) in flow.iter().zip(cf.vectors()).enumerate() {
        if !cf.valid()[i] {
            continue;
        }
        for c in 0..3 {
            let d = u[c] - k[c];
            total += d.abs();
            grad[i][c] = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    (total, grad)
}

pub fn loss_constraints(flow: &FlowField, cf: &ConstraintField) -> Result<f64> {
    check_dims(flow.dims(), cf.dims())?;
    Ok(constraints_raw(flow.vectors(), cf).0)
}

/// Mean squared forward difference, averaged over 3 components × 3 axes.
pub(crate) fn smooth_raw(flow: &[Vec3], d: Dims, want_grad: bool) -> (f64, Vec<Vec3>) {
    let strides = [1, d.nx, d.nx * d.ny];
    let lens = [d.nx, d.ny, d.nz];
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; if want_grad { flow.len() } else { 0 }];
    for axis in 0..3 {
        let (s, n) = (strides[axis], lens[axis]);
        if n < 2 {
            continue;
        }
        let count = (d.len() / n * (n - 1)) as f64;
        let w = 1.0 / (9.0 * count);
        for i in 0..flow.len() {
            if (i / s) % n + 1 == n {
                continue;
            }
            let (a, b) = (flow[i], flow[i + s]);
            for c in 0..3 {
                let diff = b[c] - a[c];
                total += w * diff * diff;
                if want_grad {
                    grad[i + s][c] += 2.0 * w * diff;
                    grad[i][c] -= 2.0 * w * diff;
                }
            }
        }
    }
    (total, grad)
}

pub fn loss_smooth(flow: &FlowField) -> Result<f64> {
    flow.dims().ensure_min_axis(3)?;
    Ok(smooth_raw(flow.vectors(), flow.dims(), false).0)
}

/// Squared-denominator soft Dice loss between the warped moving indicator
/// `a` and the fixed indicator `b`: `1 − 2Σab / (Σa² + Σb²)`.
pub(crate) fn overlap_raw(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s2: f64 = a.iter().map(|x| x * x).sum::<f64>() + b.iter().map(|y| y * y).sum::<f64>();
    if s2 == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| -2.0 * (y * s2 - 2.0 * sab * x) / (s2 * s2))
        .collect();
    (1.0 - 2.0 * sab / s2, grad)
}

/// Overlap between the `moving` region warped by `flow` and the `fixed`
/// region (`0` for perfect overlap, `1` for disjoint regions).
pub fn loss_overlap(flow: &FlowField, moving: &BinaryVolume, fixed: &BinaryVolume) -> Result<f64> {
    check_dims(flow.dims(), moving.dims())?;
    check_dims(flow.dims(), fixed.dims())?;
    let a = warp_raw(moving.to_scalar().data(), flow.dims(), flow.vectors());
    Ok(overlap_raw(&a, fixed.to_scalar().data()).0)
}

/// Chains `∂L/∂warped` through the sampled moving-image gradient.
pub(crate) fn chain(dl_dw: &[f64], grads: &[Vec3], scale: f64, out: &mut [Vec3]) {
    for ((o, g), &s) in out.iter_mut().zip(grads).zip(dl_dw) {
        for c in 0..3 {
            o[c] += scale * s * g[c];
        }
    }
}

/// Value and flow gradient of each differentiable term, for a fixed
/// `(moving, target)` pair. Used by the solver and by gradient checks.
pub mod gradients {
    use super::*;

    fn photometric(
        flow: &FlowField,
        moving: &ScalarVolume,
        f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    ) -> Result<(f64, Vec<Vec3>)> {
        check_dims(flow.dims(), moving.dims())?;
        let (w, g) = warp_grad_raw(moving.data(), moving.dims(), flow.vectors());
        let (v, dl) = f(&w);
        let mut out = vec![[0.0; 3]; w.len()];
        chain(&dl, &g, 1.0, &mut out);
        Ok((v, out))
    }

    pub fn l1_smooth(flow: &FlowField, moving: &ScalarVolume, target: &ScalarVolume) -> Result<(f64, Vec<Vec3>)> {
        check_dims(moving.dims(), target.dims())?;
        photometric(flow, moving, |w| charbonnier_raw(w, target.data()))
    }

    pub fn ssim(flow: &FlowField, moving: &ScalarVolume, target: &ScalarVolume) -> Result<(f64, Vec<Vec3>)> {
        check_dims(moving.dims(), target.dims())?;
        let t = SsimTarget::new(target)?;
        photometric(flow, moving, |w| {
            let (v, g) = t.loss(w, true);
            (v, g.expect("gradient requested"))
        })
    }

    pub fn constraints(flow: &FlowField, cf: &ConstraintField) -> Result<(f64, Vec<Vec3>)> {
        check_dims(flow.dims(), cf.dims())?;
        Ok(constraints_raw(flow.vectors(), cf))
    }

    pub fn smooth(flow: &FlowField) -> Result<(f64, Vec<Vec3>)> {
        flow.dims().ensure_min_axis(3)?;
        Ok(smooth_raw(flow.vectors(), flow.dims(), true))
    }

    pub fn overlap(flow: &FlowField, moving: &BinaryVolume, fixed: &BinaryVolume) -> Result<(f64, Vec<Vec3>)> {
        check_dims(flow.dims(), fixed.dims())?;
        let b = fixed.to_scalar();
        photometric(flow, &moving.to_scalar(), |a| overlap_raw(a, b.data()))
    }
}
