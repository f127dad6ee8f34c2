//! Binary morphology with cubic structuring elements. Voxels outside the grid
//! count as unset for both dilation and erosion.

use crate::error::{Error, Result};
use crate::volgrid::BinaryVolume;

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::BadKernel(k));
    }
    Ok(())
}

/// One separable pass: `any` (dilate) or `all` (erode) over a window of
/// radius `r` along `axis`.
fn pass(src: &[bool], dims: [usize; 3], axis: usize, r: usize, dilate: bool) -> Vec<bool> {
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis];
    let mut out = vec![false; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let c = (i / stride) % n;
        let lo = c.saturating_sub(r);
        let hi = (c + r).min(n - 1);
        let base = i - c * stride;
        *o = if dilate {
            (lo..=hi).any(|j| src[base + j * stride])
        } else {
            // window hanging off the grid sees unset voxels
            c >= r && c + r < n && (lo..=hi).all(|j| src[base + j * stride])
        };
    }
    out
}

fn apply(bin: &BinaryVolume, k: usize, dilate: bool) -> BinaryVolume {
    let dims = bin.dims().as_array();
    let r = k / 2;
    let mut data = bin.data().to_vec();
    for axis in 0..3 {
        data = pass(&data, dims, axis, r, dilate);
    }
    BinaryVolume::new(bin.dims(), data).expect("same grid")
}

pub fn dilate(bin: &BinaryVolume, k: usize) -> Result<BinaryVolume> {
    check_kernel(k)?;
    Ok(apply(bin, k, true))
}

pub fn erode(bin: &BinaryVolume, k: usize) -> Result<BinaryVolume> {
    check_kernel(k)?;
    Ok(apply(bin, k, false))
}

/// Closing with a `close_k` cube followed by opening with an `open_k` cube.
pub fn morpho_close_open(bin: &BinaryVolume, close_k: usize, open_k: usize) -> Result<BinaryVolume> {
    check_kernel(close_k)?;
    check_kernel(open_k)?;
    let closed = apply(&apply(bin, close_k, true), close_k, false);
    Ok(apply(&apply(&closed, open_k, false), open_k, true))
}
