//! Volume file formats: single-file uncompressed NIfTI-1 and a raw
//! float32 payload with a structured-text sidecar.

mod nifti;
mod raw;

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti1,
    RawSidecar,
}

impl VolumeFormat {
    /// Guess from the file extension: `.nii` is NIfTI-1, `.bin`/`.raw` is
    /// raw+sidecar.
    pub fn from_path(path: &Path) -> Option<VolumeFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => Some(VolumeFormat::Nifti1),
            Some("bin") | Some("raw") => Some(VolumeFormat::RawSidecar),
            _ => None,
        }
    }
}

impl std::str::FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<VolumeFormat> {
        match s {
            "nifti1" | "nifti" | "nii" => Ok(VolumeFormat::Nifti1),
            "raw" | "raw_sidecar" => Ok(VolumeFormat::RawSidecar),
            other => Err(Error::Config(format!(
                "unknown volume format {other:?}; expected nifti1 or raw"
            ))),
        }
    }
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume> {
    match format {
        VolumeFormat::Nifti1 => nifti::load(path),
        VolumeFormat::RawSidecar => raw::load(path),
    }
}

pub fn write_volume(v: &Volume, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Nifti1 => nifti::write(v, path),
        VolumeFormat::RawSidecar => raw::write(v, path),
    }
}

/// Write bytes to `path` via a temporary file and atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
