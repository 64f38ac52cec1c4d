//! Single-file uncompressed NIfTI-1 (.nii) reading and writing.
//!
//! Scope is deliberately narrow: little-endian files, scalar voxel types
//! int16/uint16/float32/float64, no affine handling beyond the axis
//! permutation from (x, y, z) storage order to slice-major volumes.
//! Anything outside that errors with the offending header field.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::Volume;

const HEADER_LEN: usize = 348;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

// Header field offsets.
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_DESCRIP: usize = 148;
const OFF_MAGIC: usize = 344;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

fn read_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([buf[off], buf[off + 1]])
}

fn read_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn read_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

pub fn load(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("file is {} bytes, shorter than the 348-byte header", bytes.len()),
        ));
    }
    let hdr = &bytes[..HEADER_LEN];

    let sizeof_hdr = read_i32(hdr, OFF_SIZEOF_HDR);
    if sizeof_hdr != 348 {
        if sizeof_hdr.swap_bytes() == 348 {
            return Err(Error::format(path, "big-endian NIfTI is not supported"));
        }
        return Err(Error::format(
            path,
            format!("sizeof_hdr is {sizeof_hdr}, expected 348"),
        ));
    }

    let magic: &[u8] = &hdr[OFF_MAGIC..OFF_MAGIC + 4];
    if magic == MAGIC_PAIR {
        return Err(Error::format(
            path,
            "magic \"ni1\" (two-file NIfTI) is not supported, expected single-file \"n+1\"",
        ));
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::format(
            path,
            format!("magic {:?} is neither \"n+1\" nor \"ni1\"", &magic[..3]),
        ));
    }

    let ndim = read_i16(hdr, OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("dim[0] is {ndim}, expected 1..=7")));
    }
    let mut dim = [1usize; 7];
    for (axis, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = read_i16(hdr, OFF_DIM + 2 * (axis + 1));
        if v < 1 {
            return Err(Error::format(
                path,
                format!("dim[{}] is {v}, expected >= 1", axis + 1),
            ));
        }
        *d = v as usize;
    }
    let (nx, ny, nz) = (dim[0], dim[1], dim[2]);
    let trailing: usize = dim[3..].iter().product();
    if trailing != 1 {
        return Err(Error::format(
            path,
            "volumes with more than three non-singleton dimensions are not supported",
        ));
    }

    let datatype = read_i16(hdr, OFF_DATATYPE);
    let bitpix = read_i16(hdr, OFF_BITPIX);
    let bytes_per = match datatype {
        DT_INT16 | DT_UINT16 => 2usize,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::format(
                path,
                format!("datatype {other} not supported (int16/uint16/float32/float64 only)"),
            ))
        }
    };
    if bitpix as usize != bytes_per * 8 {
        return Err(Error::format(
            path,
            format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }

    let mut pixdim = [0f32; 4];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = read_f32(hdr, OFF_PIXDIM + 4 * i);
    }
    // pixdim[3] may legitimately be absent in single-slice files.
    let through = if pixdim[3] > 0.0 || nz > 1 { pixdim[3] } else { 1.0 };
    for (name, v) in [("pixdim[1]", pixdim[1]), ("pixdim[2]", pixdim[2]), ("pixdim[3]", through)] {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::format(path, format!("{name} is {v}, expected > 0")));
        }
    }

    let vox_offset = read_f32(hdr, OFF_VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::format(
            path,
            format!("vox_offset {vox_offset} invalid for single-file NIfTI"),
        ));
    }
    let data_start = vox_offset as usize;

    let voxels = nx * ny * nz;
    let need = data_start + voxels * bytes_per;
    if bytes.len() < need {
        return Err(Error::Size(format!(
            "{}: payload needs {need} bytes for {nx}x{ny}x{nz} voxels, file has {}",
            path.display(),
            bytes.len()
        )));
    }
    let payload = &bytes[data_start..need];

    let slope = read_f32(hdr, OFF_SCL_SLOPE);
    let inter = read_f32(hdr, OFF_SCL_INTER);
    let rescale = slope.is_finite() && slope != 0.0 && (slope != 1.0 || inter != 0.0);

    let mut data = Vec::with_capacity(voxels);
    match datatype {
        DT_INT16 => {
            for c in payload.chunks_exact(2) {
                data.push(i16::from_le_bytes([c[0], c[1]]) as f32);
            }
        }
        DT_UINT16 => {
            for c in payload.chunks_exact(2) {
                data.push(u16::from_le_bytes([c[0], c[1]]) as f32);
            }
        }
        DT_FLOAT32 => {
            for c in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
        }
        DT_FLOAT64 => {
            for c in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes([
                    c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                ]) as f32);
            }
        }
        _ => unreachable!(),
    }
    if rescale {
        for v in data.iter_mut() {
            *v = slope * *v + inter;
        }
    }

    // NIfTI stores x fastest, then y, then z; that linear order equals our
    // row-major (slice=z, row=y, col=x) layout, so no shuffling is needed.
    let descrip = &hdr[OFF_DESCRIP..OFF_DESCRIP + 80];
    let descrip_end = descrip.iter().position(|&b| b == 0).unwrap_or(80);
    let provenance = String::from_utf8_lossy(&descrip[..descrip_end]).trim().to_string();
    let provenance = if provenance.is_empty() {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        provenance
    };

    Volume::new(
        data,
        (nz, ny, nx),
        (through, pixdim[2], pixdim[1]),
        provenance,
    )
}

pub fn write(v: &Volume, path: &Path) -> Result<()> {
    let (slices, rows, cols) = v.dims();
    for (axis, d) in [("cols", cols), ("rows", rows), ("slices", slices)] {
        if d > i16::MAX as usize {
            return Err(Error::Size(format!("{axis} = {d} exceeds the NIfTI dim range")));
        }
    }
    let spacing = v.spacing();

    let mut hdr = [0u8; HEADER_LEN];
    put_i32(&mut hdr, OFF_SIZEOF_HDR, 348);
    put_i16(&mut hdr, OFF_DIM, 3);
    put_i16(&mut hdr, OFF_DIM + 2, cols as i16);
    put_i16(&mut hdr, OFF_DIM + 4, rows as i16);
    put_i16(&mut hdr, OFF_DIM + 6, slices as i16);
    for axis in 4..8 {
        put_i16(&mut hdr, OFF_DIM + 2 * axis, 1);
    }
    put_i16(&mut hdr, OFF_DATATYPE, DT_FLOAT32);
    put_i16(&mut hdr, OFF_BITPIX, 32);
    put_f32(&mut hdr, OFF_PIXDIM, 1.0); // qfac
    put_f32(&mut hdr, OFF_PIXDIM + 4, spacing.col_mm);
    put_f32(&mut hdr, OFF_PIXDIM + 8, spacing.row_mm);
    put_f32(&mut hdr, OFF_PIXDIM + 12, spacing.through_mm);
    put_f32(&mut hdr, OFF_VOX_OFFSET, 352.0);
    put_f32(&mut hdr, OFF_SCL_SLOPE, 1.0);
    put_f32(&mut hdr, OFF_SCL_INTER, 0.0);
    hdr[OFF_XYZT_UNITS] = 2; // millimetres
    let descrip = v.provenance().as_bytes();
    let n = descrip.len().min(79);
    hdr[OFF_DESCRIP..OFF_DESCRIP + n].copy_from_slice(&descrip[..n]);
    hdr[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC_SINGLE);

    let mut bytes = Vec::with_capacity(352 + v.data().len() * 4);
    bytes.extend_from_slice(&hdr);
    bytes.extend_from_slice(&[0u8; 4]); // no header extensions
    for &x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    super::write_atomic(path, &bytes)
}
