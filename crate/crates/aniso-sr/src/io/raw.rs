//! Raw little-endian float32 payload with a `key: value` sidecar.
//!
//! The sidecar lives next to the payload as `<file>.meta` and declares
//! `dims`, `spacing_mm`, `dtype` (always `f32le`) and free-text
//! `provenance`. Deliberately trivial to inspect and to build fixtures for.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::Volume;

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    path.with_file_name(name)
}

pub fn load(path: &Path) -> Result<Volume> {
    let meta_path = sidecar_path(path);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut spacing: Option<(f32, f32, f32)> = None;
    let mut dtype: Option<String> = None;
    let mut provenance = String::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            Error::format(&meta_path, format!("line {line:?} is not `key: value`"))
        })?;
        let value = value.trim();
        match key.trim() {
            "dims" => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|p| p.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::format(&meta_path, format!("dims {value:?} unparsable")))?;
                if parts.len() != 3 {
                    return Err(Error::format(
                        &meta_path,
                        format!("dims must have 3 entries, got {}", parts.len()),
                    ));
                }
                dims = Some((parts[0], parts[1], parts[2]));
            }
            "spacing_mm" => {
                let parts: Vec<f32> = value
                    .split_whitespace()
                    .map(|p| p.parse::<f32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        Error::format(&meta_path, format!("spacing_mm {value:?} unparsable"))
                    })?;
                if parts.len() != 3 {
                    return Err(Error::format(
                        &meta_path,
                        format!("spacing_mm must have 3 entries, got {}", parts.len()),
                    ));
                }
                spacing = Some((parts[0], parts[1], parts[2]));
            }
            "dtype" => dtype = Some(value.to_string()),
            "provenance" => provenance = value.to_string(),
            other => {
                return Err(Error::format(&meta_path, format!("unknown key {other:?}")));
            }
        }
    }

    let dims = dims.ok_or_else(|| Error::format(&meta_path, "missing key dims"))?;
    let spacing = spacing.ok_or_else(|| Error::format(&meta_path, "missing key spacing_mm"))?;
    let dtype = dtype.ok_or_else(|| Error::format(&meta_path, "missing key dtype"))?;
    if dtype != "f32le" {
        return Err(Error::format(
            &meta_path,
            format!("dtype {dtype:?} not supported, expected f32le"),
        ));
    }

    let payload = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let voxels = dims.0 * dims.1 * dims.2;
    if payload.len() != voxels * 4 {
        return Err(Error::Size(format!(
            "{}: payload is {} bytes but dims {}x{}x{} need {}",
            path.display(),
            payload.len(),
            dims.0,
            dims.1,
            dims.2,
            voxels * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(data, dims, spacing, provenance)
}

pub fn write(v: &Volume, path: &Path) -> Result<()> {
    let (slices, rows, cols) = v.dims();
    let spacing = v.spacing();
    let meta = format!(
        "dims: {slices} {rows} {cols}\nspacing_mm: {} {} {}\ndtype: f32le\nprovenance: {}\n",
        spacing.through_mm,
        spacing.row_mm,
        spacing.col_mm,
        v.provenance().replace(['\n', '\r'], " "),
    );
    let mut payload = Vec::with_capacity(v.data().len() * 4);
    for &x in v.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    super::write_atomic(path, &payload)?;
    super::write_atomic(&sidecar_path(path), meta.as_bytes())
}
