use crate::error::{Error, Result};
use crate::volgrid::{sample_raw, Dims, FlowField, ScalarVolume};

/// Smallest axis allowed at the coarsest pyramid level.
pub const MIN_LEVEL_AXIS: usize = 4;

/// Dims of every level: each axis halves (floor) per level.
pub fn pyramid_dims(dims: Dims, levels: usize) -> Result<Vec<Dims>> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let mut out = vec![dims];
    for _ in 1..levels {
        let d = *out.last().expect("non-empty");
        out.push(Dims::new(d.nx / 2, d.ny / 2, d.nz / 2));
    }
    if out.last().expect("non-empty").min_axis() < MIN_LEVEL_AXIS {
        return Err(Error::TooManyLevels {
            levels,
            dims: dims.as_array(),
        });
    }
    Ok(out)
}

/// Source index range of coarse cell `i` along an axis of length `n`; the
/// last cell absorbs an odd trailing slice.
fn cell_range(i: usize, m: usize, n: usize) -> std::ops::Range<usize> {
    if i + 1 == m {
        2 * i..n
    } else {
        2 * i..2 * i + 2
    }
}

/// Box-average a multi-channel x-fastest buffer onto `coarse`.
pub(crate) fn downsample_raw(data: &[f64], channels: usize, fine: Dims, coarse: Dims) -> Vec<f64> {
    let mut out = vec![0.0; coarse.len() * channels];
    for (ci, [x, y, z]) in coarse.voxels() {
        let (rx, ry, rz) = (
            cell_range(x, coarse.nx, fine.nx),
            cell_range(y, coarse.ny, fine.ny),
            cell_range(z, coarse.nz, fine.nz),
        );
        let count = (rx.len() * ry.len() * rz.len()) as f64;
        for zz in rz {
            for yy in ry.clone() {
                for xx in rx.clone() {
                    let fi = fine.index(xx, yy, zz);
                    for c in 0..channels {
                        out[ci * channels + c] += data[fi * channels + c];
                    }
                }
            }
        }
        for c in 0..channels {
            out[ci * channels + c] /= count;
        }
    }
    out
}

/// Level 0 is the input; each further level is a 2³ box average.
pub fn build_pyramid(vol: &ScalarVolume, levels: usize) -> Result<Vec<ScalarVolume>> {
    let dims = pyramid_dims(vol.dims(), levels)?;
    let mut out = vec![vol.clone()];
    for pair in dims.windows(2) {
        let prev = out.last().expect("non-empty");
        out.push(ScalarVolume::from_raw(pair[1], downsample_raw(prev.data(), 1, pair[0], pair[1])));
    }
    Ok(out)
}

/// Box-averages a flow onto a coarser grid, halving the vectors.
pub fn downsample_flow(flow: &FlowField, coarse: Dims) -> FlowField {
    let flat: Vec<f64> = flow.vectors().iter().flatten().copied().collect();
    let avg = downsample_raw(&flat, 3, flow.dims(), coarse);
    FlowField::from_raw(coarse, avg.chunks_exact(3).map(|c| [c[0] / 2.0, c[1] / 2.0, c[2] / 2.0]).collect())
}

/// Trilinear upsampling onto `fine` with vectors doubled. Fine voxel `x`
/// sits at coarse coordinate `(x − 0.5) / 2`.
pub fn upsample_flow(flow: &FlowField, fine: Dims) -> FlowField {
    let coarse = flow.dims();
    let comps: Vec<Vec<f64>> = (0..3).map(|c| flow.vectors().iter().map(|v| v[c]).collect()).collect();
    FlowField::from_fn(fine, |x, y, z| {
        let p = [(x as f64 - 0.5) / 2.0, (y as f64 - 0.5) / 2.0, (z as f64 - 0.5) / 2.0];
        std::array::from_fn(|c| 2.0 * sample_raw(&comps[c], coarse, p))
    })
}
