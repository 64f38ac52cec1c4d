//! Anisotropic 3D volumes, their 2D slices, and the preprocessing operations
//! applied before training and evaluation.

use crate::baselines::{bspline3_kernel, bspline3_prefilter, mirror};
use crate::error::{Error, Result};

/// Voxel spacing in millimetres, slice-major order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spacing {
    pub through_mm: f32,
    pub row_mm: f32,
    pub col_mm: f32,
}

impl Spacing {
    pub fn new(through_mm: f32, row_mm: f32, col_mm: f32) -> Spacing {
        Spacing {
            through_mm,
            row_mm,
            col_mm,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("through_mm", self.through_mm),
            ("row_mm", self.row_mm),
            ("col_mm", self.col_mm),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Size(format!("spacing {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A 3D scalar field indexed (slice, row, col) with per-axis spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    slices: usize,
    rows: usize,
    cols: usize,
    spacing: Spacing,
    provenance: String,
}

impl Volume {
    pub fn new(
        data: Vec<f32>,
        dims: (usize, usize, usize),
        spacing: (f32, f32, f32),
        provenance: String,
    ) -> Result<Volume> {
        let (slices, rows, cols) = dims;
        if slices == 0 || rows == 0 || cols == 0 {
            return Err(Error::Size(format!(
                "volume dimensions must all be >= 1, got {slices}x{rows}x{cols}"
            )));
        }
        if data.len() != slices * rows * cols {
            return Err(Error::Size(format!(
                "payload has {} voxels but dims {}x{}x{} need {}",
                data.len(),
                slices,
                rows,
                cols,
                slices * rows * cols
            )));
        }
        let spacing = Spacing::new(spacing.0, spacing.1, spacing.2);
        spacing.validate()?;
        Ok(Volume {
            data,
            slices,
            rows,
            cols,
            spacing,
            provenance,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.slices, self.rows, self.cols)
    }

    pub fn slice_count(&self) -> usize {
        self.slices
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: impl Into<String>) {
        self.provenance = provenance.into();
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize) -> f32 {
        self.data[(k * self.rows + i) * self.cols + j]
    }

    /// Contiguous data of slice `k`.
    pub fn slice_data(&self, k: usize) -> &[f32] {
        let plane = self.rows * self.cols;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn slice_at(&self, k: usize) -> Slice {
        Slice {
            data: self.slice_data(k).to_vec(),
            rows: self.rows,
            cols: self.cols,
            row_mm: self.spacing.row_mm,
            col_mm: self.spacing.col_mm,
        }
    }

    /// Split into one slice per through-plane index, order preserved.
    pub fn extract_slices(&self) -> Vec<Slice> {
        (0..self.slices).map(|k| self.slice_at(k)).collect()
    }

    /// Rescale to [0, 1] from the given intensity percentiles, clamping the
    /// tails. Percentiles are taken over the whole volume, linearly
    /// interpolated between closest ranks of the sorted values.
    pub fn percentile_normalize(&self, lo_pct: f64, hi_pct: f64) -> Result<Volume> {
        if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct
        {
            return Err(Error::Domain(format!(
                "percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})"
            )));
        }
        let mut sorted: Vec<f64> = self.data.iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let p_lo = percentile_of_sorted(&sorted, lo_pct);
        let p_hi = percentile_of_sorted(&sorted, hi_pct);
        if p_hi <= p_lo {
            return Err(Error::Degenerate(format!(
                "percentiles {lo_pct} and {hi_pct} coincide at {p_lo}; volume is constant there"
            )));
        }
        let scale = 1.0 / (p_hi - p_lo);
        let data = self
            .data
            .iter()
            .map(|&v| (((v as f64 - p_lo) * scale).clamp(0.0, 1.0)) as f32)
            .collect();
        Ok(Volume {
            data,
            ..self.clone()
        })
    }

    /// Resample every slice to the target in-plane spacing with the cubic
    /// B-spline kernel; the through-plane axis is untouched. Exact identity
    /// when the target equals the current spacing.
    pub fn resample_inplane(&self, target: (f32, f32)) -> Result<Volume> {
        let (t_row, t_col) = target;
        if !(t_row > 0.0 && t_col > 0.0) {
            return Err(Error::Domain(format!(
                "target spacing must be positive, got ({t_row}, {t_col})"
            )));
        }
        if t_row == self.spacing.row_mm && t_col == self.spacing.col_mm {
            return Ok(self.clone());
        }
        let new_rows = ((self.rows as f64 * self.spacing.row_mm as f64 / t_row as f64).round()
            as usize)
            .max(1);
        let new_cols = ((self.cols as f64 * self.spacing.col_mm as f64 / t_col as f64).round()
            as usize)
            .max(1);
        let row_step = t_row as f64 / self.spacing.row_mm as f64;
        let col_step = t_col as f64 / self.spacing.col_mm as f64;

        let mut out = vec![0.0f32; self.slices * new_rows * new_cols];
        let mut grid = vec![0.0f64; self.rows * self.cols];
        for k in 0..self.slices {
            let src = self.slice_data(k);
            for (g, &v) in grid.iter_mut().zip(src.iter()) {
                *g = v as f64;
            }
            // Separable prefilter: rows, then columns.
            for r in 0..self.rows {
                bspline3_prefilter(&mut grid[r * self.cols..(r + 1) * self.cols]);
            }
            let mut col_buf = vec![0.0f64; self.rows];
            for c in 0..self.cols {
                for r in 0..self.rows {
                    col_buf[r] = grid[r * self.cols + c];
                }
                bspline3_prefilter(&mut col_buf);
                for r in 0..self.rows {
                    grid[r * self.cols + c] = col_buf[r];
                }
            }
            let dst = &mut out[k * new_rows * new_cols..(k + 1) * new_rows * new_cols];
            sample_bspline_grid(&grid, self.rows, self.cols, new_rows, new_cols, row_step,
                col_step, dst);
        }
        Volume::new(
            out,
            (self.slices, new_rows, new_cols),
            (self.spacing.through_mm, t_row, t_col),
            self.provenance.clone(),
        )
    }

    /// Spatially centered in-plane crop, floor-biased when the margin is odd.
    /// The through-plane dimension is preserved.
    pub fn center_crop(&self, rows: usize, cols: usize) -> Result<Volume> {
        if rows == 0 || cols == 0 {
            return Err(Error::Size("crop dimensions must be >= 1".into()));
        }
        if rows > self.rows || cols > self.cols {
            return Err(Error::Size(format!(
                "crop {rows}x{cols} exceeds volume {}x{}",
                self.rows, self.cols
            )));
        }
        let off_r = (self.rows - rows) / 2;
        let off_c = (self.cols - cols) / 2;
        let mut data = Vec::with_capacity(self.slices * rows * cols);
        for k in 0..self.slices {
            let src = self.slice_data(k);
            for i in 0..rows {
                let start = (off_r + i) * self.cols + off_c;
                data.extend_from_slice(&src[start..start + cols]);
            }
        }
        Volume::new(
            data,
            (self.slices, rows, cols),
            (
                self.spacing.through_mm,
                self.spacing.row_mm,
                self.spacing.col_mm,
            ),
            self.provenance.clone(),
        )
    }

    /// In-plane transpose (rows and cols swapped on every slice).
    pub fn transpose_inplane(&self) -> Volume {
        let mut data = vec![0.0f32; self.data.len()];
        let plane = self.rows * self.cols;
        for k in 0..self.slices {
            let src = self.slice_data(k);
            let dst = &mut data[k * plane..(k + 1) * plane];
            for i in 0..self.rows {
                for j in 0..self.cols {
                    dst[j * self.rows + i] = src[i * self.cols + j];
                }
            }
        }
        Volume {
            data,
            slices: self.slices,
            rows: self.cols,
            cols: self.rows,
            spacing: Spacing::new(
                self.spacing.through_mm,
                self.spacing.col_mm,
                self.spacing.row_mm,
            ),
            provenance: self.provenance.clone(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_bspline_grid(
    coeffs: &[f64],
    rows: usize,
    cols: usize,
    new_rows: usize,
    new_cols: usize,
    row_step: f64,
    col_step: f64,
    dst: &mut [f32],
) {
    // Per-axis taps: mirrored base indices and the four kernel weights.
    let col_taps: Vec<([usize; 4], [f64; 4])> = (0..new_cols)
        .map(|j| bspline_taps(j as f64 * col_step, cols))
        .collect();
    let row_taps: Vec<([usize; 4], [f64; 4])> = (0..new_rows)
        .map(|i| bspline_taps(i as f64 * row_step, rows))
        .collect();
    for (i, (ri, rw)) in row_taps.iter().enumerate() {
        for (j, (ci, cw)) in col_taps.iter().enumerate() {
            let mut acc = 0.0f64;
            for a in 0..4 {
                let row_base = ri[a] * cols;
                let mut inner = 0.0f64;
                for b in 0..4 {
                    inner += cw[b] * coeffs[row_base + ci[b]];
                }
                acc += rw[a] * inner;
            }
            dst[i * new_cols + j] = acc as f32;
        }
    }
}

fn bspline_taps(t: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let base = t.floor() as isize;
    let f = t - base as f64;
    let mut idx = [0usize; 4];
    let mut w = [0.0f64; 4];
    for (d, (ix, wv)) in idx.iter_mut().zip(w.iter_mut()).enumerate() {
        let k = base - 1 + d as isize;
        *ix = mirror(k, n);
        *wv = bspline3_kernel(f - (d as f64 - 1.0));
    }
    (idx, w)
}

/// Percentile by linear interpolation between closest ranks of an ascending
/// sorted sequence.
pub(crate) fn percentile_of_sorted(sorted: &[f64], pct: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// A single 2D slice with in-plane spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    data: Vec<f32>,
    rows: usize,
    cols: usize,
    row_mm: f32,
    col_mm: f32,
}

impl Slice {
    pub fn new(data: Vec<f32>, rows: usize, cols: usize, spacing: (f32, f32)) -> Result<Slice> {
        if rows == 0 || cols == 0 {
            return Err(Error::Size("slice dimensions must be >= 1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Size(format!(
                "slice payload has {} values, dims {rows}x{cols} need {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Slice {
            data,
            rows,
            cols,
            row_mm: spacing.0,
            col_mm: spacing.1,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn spacing(&self) -> (f32, f32) {
        (self.row_mm, self.col_mm)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }
}

/// Stack slices along a new through-plane axis. All slices must agree in
/// shape and in-plane spacing.
pub fn stack_slices(slices: &[Slice], through_plane_mm: f32) -> Result<Volume> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Size("cannot stack an empty slice list".into()))?;
    let (rows, cols) = (first.rows, first.cols);
    let spacing = (first.row_mm, first.col_mm);
    let mut data = Vec::with_capacity(slices.len() * rows * cols);
    for (k, s) in slices.iter().enumerate() {
        if s.rows != rows || s.cols != cols {
            return Err(Error::Shape(format!(
                "slice {k} is {}x{}, expected {rows}x{cols}",
                s.rows, s.cols
            )));
        }
        if (s.row_mm, s.col_mm) != spacing {
            return Err(Error::Shape(format!(
                "slice {k} spacing ({}, {}) differs from ({}, {})",
                s.row_mm, s.col_mm, spacing.0, spacing.1
            )));
        }
        data.extend_from_slice(&s.data);
    }
    Volume::new(
        data,
        (slices.len(), rows, cols),
        (through_plane_mm, spacing.0, spacing.1),
        String::new(),
    )
}
