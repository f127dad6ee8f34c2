//! `.volhdr` + `.raw` volume files.
//!
//! The header is JSON: `{"dims":[nx,ny,nz], "dtype":"f32"|"u8", "spacing":s, "channels":c}`.
//! The sidecar raw file holds the payload little-endian, x fastest, channels
//! interleaved per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dims, FlowField, Label, ScalarVolume, SegmentationMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub dtype: String,
    pub spacing: f64,
    pub channels: usize,
}

impl VolumeHeader {
    fn element_size(&self) -> Result<usize> {
        match self.dtype.as_str() {
            "f32" => Ok(4),
            "u8" => Ok(1),
            other => Err(Error::Parse(format!("unsupported dtype {other:?}"))),
        }
    }

    fn payload_len(&self) -> Result<usize> {
        Ok(self.dims.iter().product::<usize>() * self.channels * self.element_size()?)
    }
}

/// Sidecar payload path for a header path (`name.volhdr` -> `name.raw`).
pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn write_header(path: &Path, header: &VolumeHeader) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(header)?)?;
    Ok(())
}

fn read_payload(path: &Path) -> Result<(VolumeHeader, Vec<u8>)> {
    let text = fs::read_to_string(path)?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if header.dims.contains(&0) || header.channels == 0 {
        return Err(Error::Parse(format!(
            "{}: dims and channels must be positive",
            path.display()
        )));
    }
    let raw = fs::read(raw_path(path))?;
    let expected = header.payload_len()?;
    if raw.len() != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected,
            actual: raw.len(),
        });
    }
    Ok((header, raw))
}

/// Writes `data` (already channel-interleaved) as 32-bit floats.
pub fn write_channels(
    path: &Path,
    dims: Dims,
    spacing: f64,
    channels: usize,
    data: &[f64],
) -> Result<()> {
    if data.len() != dims.len() * channels {
        return Err(Error::InvalidData(format!(
            "{} values for {} voxels x {channels} channels",
            data.len(),
            dims.len()
        )));
    }
    let header = VolumeHeader {
        dims: dims.as_array(),
        dtype: "f32".into(),
        spacing,
        channels,
    };
    write_header(path, &header)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(raw_path(path), bytes)?;
    Ok(())
}

/// Reads an f32 volume with the expected channel count.
pub fn read_channels(path: &Path, channels: usize) -> Result<(VolumeHeader, Vec<f64>)> {
    let (header, raw) = read_payload(path)?;
    if header.dtype != "f32" {
        return Err(Error::Parse(format!(
            "{}: expected dtype f32, found {}",
            path.display(),
            header.dtype
        )));
    }
    if header.channels != channels {
        return Err(Error::Parse(format!(
            "{}: expected {channels} channels, found {}",
            path.display(),
            header.channels
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((header, data))
}

pub fn write_volume(vol: &ScalarVolume, path: &Path) -> Result<()> {
    write_channels(path, vol.dims(), vol.spacing(), 1, vol.data())
}

pub fn read_volume(path: &Path) -> Result<ScalarVolume> {
    let (header, data) = read_channels(path, 1)?;
    ScalarVolume::with_spacing(header.dims.into(), data, header.spacing)
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let data: Vec<f64> = flow.vectors().iter().flatten().copied().collect();
    write_channels(path, flow.dims(), 1.0, 3, &data)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let (header, data) = read_channels(path, 3)?;
    let vectors = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    FlowField::new(header.dims.into(), vectors)
}

pub fn write_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        dims: mask.dims().as_array(),
        dtype: "u8".into(),
        spacing: 1.0,
        channels: 1,
    };
    write_header(path, &header)?;
    let bytes: Vec<u8> = mask.labels().iter().map(|l| l.code()).collect();
    fs::write(raw_path(path), bytes)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<SegmentationMask> {
    let (header, raw) = read_payload(path)?;
    if header.dtype != "u8" || header.channels != 1 {
        return Err(Error::Parse(format!(
            "{}: masks are single-channel u8",
            path.display()
        )));
    }
    let labels = raw
        .iter()
        .map(|&c| Label::from_code(c).ok_or_else(|| Error::Parse(format!("unknown label code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    SegmentationMask::new(header.dims.into(), labels)
}
