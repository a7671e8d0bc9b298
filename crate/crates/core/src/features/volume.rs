//! Dense 3-D scalar volumes and binary masks with a JSON sidecar format.
//!
//! The sidecar looks like
//! `{"dims":[x,y,z],"spacing_mm":[sx,sy,sz],"dtype":"f32le","order":"x-fastest"}`
//! and the payload lives next to it with the `.raw` extension, unless the
//! sidecar names another file in `"data"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::data(format!(
                "volume payload has {} voxels, dims {:?} need {}",
                data.len(),
                dims,
                dims[0] * dims[1] * dims[2]
            )));
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    /// Samples `f(x_mm, y_mm, z_mm)` at voxel positions `index * spacing`.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(
                        x as f64 * spacing[0],
                        y as f64 * spacing[1],
                        z as f64 * spacing[2],
                    ));
                }
            }
        }
        Ok(Volume {
            dims,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Volume {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data,
        }
    }
}

fn check_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::data(format!("volume dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::data(format!("voxel spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::data("mask payload does not match its dims"));
        }
        Ok(Mask { dims, data })
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Mask {
            dims,
            data: vec![true; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    #[serde(default = "default_order")]
    order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

fn default_order() -> String {
    "x-fastest".into()
}

fn payload_path(sidecar: &Path, named: Option<&str>) -> PathBuf {
    match named {
        Some(name) => sidecar.parent().unwrap_or(Path::new("")).join(name),
        None => sidecar.with_extension("raw"),
    }
}

fn read_sidecar(path: &Path, dtype: &str) -> Result<(Sidecar, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    if meta.order != "x-fastest" {
        return Err(Error::data(format!("{}: unsupported voxel order `{}`", path.display(), meta.order)));
    }
    if meta.dtype != dtype {
        return Err(Error::data(format!(
            "{}: expected dtype `{dtype}`, found `{}`",
            path.display(),
            meta.dtype
        )));
    }
    let raw_path = payload_path(path, meta.data.as_deref());
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    Ok((meta, raw))
}

/// Reads an `f32le` volume given the path of its JSON sidecar.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let (meta, raw) = read_sidecar(path, "f32le")?;
    if raw.len() % 4 != 0 {
        return Err(Error::data(format!("{}: payload is not a whole number of f32", path.display())));
    }
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("{}: non-finite voxel value", path.display())));
    }
    Volume::new(meta.dims, meta.spacing_mm, data)
}

/// Reads a `u8` mask; any non-zero byte is inside.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (meta, raw) = read_sidecar(path, "u8")?;
    Mask::new(meta.dims, raw.into_iter().map(|b| b != 0).collect())
}

fn write_sidecar(path: &Path, meta: &Sidecar, payload: &[u8]) -> Result<()> {
    crate::bagcore::io::create_parent_dirs(path)?;
    let raw_path = payload_path(path, meta.data.as_deref());
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the sidecar at `path` and the payload next to it. Voxels are
/// stored as 32-bit floats.
pub fn write_volume(path: &Path, volume: &Volume) -> Result<()> {
    let meta = Sidecar {
        dims: volume.dims,
        spacing_mm: volume.spacing,
        dtype: "f32le".into(),
        order: default_order(),
        data: None,
    };
    let payload: Vec<u8> = volume.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write_sidecar(path, &meta, &payload)
}

pub fn write_mask(path: &Path, mask: &Mask, spacing: [f64; 3]) -> Result<()> {
    let meta = Sidecar {
        dims: mask.dims,
        spacing_mm: spacing,
        dtype: "u8".into(),
        order: default_order(),
        data: None,
    };
    let payload: Vec<u8> = mask.data.iter().map(|&b| u8::from(b)).collect();
    write_sidecar(path, &meta, &payload)
}
