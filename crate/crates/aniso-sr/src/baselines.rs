//! Classical 1D interpolation kernels and through-plane volume upsampling.
//!
//! All kernels use the mirror (reflect-without-repeat) boundary and are
//! evaluated in 64-bit arithmetic. The cubic B-spline is interpolating:
//! samples are converted to spline coefficients by the exact recursive
//! prefilter (single pole z = sqrt(3) - 2) before evaluation.

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Interpolation kernel selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InterpKind {
    Linear,
    Bspline3,
    Lanczos3,
}

impl std::fmt::Display for InterpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterpKind::Linear => write!(f, "linear"),
            InterpKind::Bspline3 => write!(f, "bspline3"),
            InterpKind::Lanczos3 => write!(f, "lanczos3"),
        }
    }
}

/// A 1D interpolator prepared over a fixed sample sequence.
///
/// For `Bspline3` the constructor runs the prefilter once so repeated
/// evaluations are cheap; the other kinds evaluate directly off the samples.
#[derive(Debug, Clone)]
pub struct Interpolator1D {
    kind: InterpKind,
    /// Samples for linear/lanczos, prefiltered coefficients for bspline3.
    values: Vec<f64>,
    len: usize,
}

impl Interpolator1D {
    pub fn new(kind: InterpKind, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Size("interpolator needs at least one sample".into()));
        }
        let mut values = samples.to_vec();
        if kind == InterpKind::Bspline3 {
            bspline3_prefilter(&mut values);
        }
        Ok(Interpolator1D {
            kind,
            values,
            len: samples.len(),
        })
    }

    pub fn kind(&self) -> InterpKind {
        self.kind
    }

    /// Evaluate at coordinate `t` in sample-index units; `t` must lie in
    /// `[0, n-1]`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let n = self.len;
        if !t.is_finite() || t < 0.0 || t > (n - 1) as f64 {
            return Err(Error::Domain(format!(
                "coordinate {t} outside [0, {}]",
                n - 1
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluate at any real coordinate via the mirror extension of the
    /// sequence. Used by resamplers that must look slightly past the ends.
    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            InterpKind::Linear => eval_linear(&self.values, t),
            InterpKind::Bspline3 => eval_bspline3(&self.values, t),
            InterpKind::Lanczos3 => eval_lanczos3(&self.values, t),
        }
    }
}

/// Linear interpolation of `samples` at `t` in [0, n-1].
pub fn interp_linear(samples: &[f64], t: f64) -> Result<f64> {
    Interpolator1D::new(InterpKind::Linear, samples)?.eval(t)
}

/// Interpolating cubic B-spline evaluation at `t` in [0, n-1].
pub fn interp_bspline3(samples: &[f64], t: f64) -> Result<f64> {
    Interpolator1D::new(InterpKind::Bspline3, samples)?.eval(t)
}

/// Renormalized Lanczos (a = 3) evaluation at `t` in [0, n-1].
pub fn interp_lanczos3(samples: &[f64], t: f64) -> Result<f64> {
    Interpolator1D::new(InterpKind::Lanczos3, samples)?.eval(t)
}

/// Mirror index without edge repetition: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
pub(crate) fn mirror(idx: isize, n: usize) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = idx % period;
    if k < 0 {
        k += period;
    }
    if k >= n as isize {
        (period - k) as usize
    } else {
        k as usize
    }
}

fn eval_linear(samples: &[f64], t: f64) -> f64 {
    let n = samples.len();
    let lo = t.floor() as isize;
    let frac = t - lo as f64;
    if frac == 0.0 {
        return samples[mirror(lo, n)];
    }
    let a = samples[mirror(lo, n)];
    let b = samples[mirror(lo + 1, n)];
    (1.0 - frac) * a + frac * b
}

/// Centered cubic B-spline basis.
pub(crate) fn bspline3_kernel(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// In-place conversion of samples to interpolating cubic B-spline
/// coefficients; exact recursive filter with mirror boundary.
pub(crate) fn bspline3_prefilter(c: &mut [f64]) {
    let n = c.len();
    if n == 1 {
        return;
    }
    let z = 3f64.sqrt() - 2.0;
    for v in c.iter_mut() {
        *v *= 6.0;
    }
    c[0] = initial_causal(c, z);
    for i in 1..n {
        c[i] += z * c[i - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
    for i in (0..n - 1).rev() {
        c[i] = z * (c[i + 1] - c[i]);
    }
}

fn initial_causal(c: &[f64], z: f64) -> f64 {
    let n = c.len();
    // Number of terms after which z^k drops below f64 epsilon.
    let horizon = (f64::EPSILON.ln() / z.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut zk = z;
        let mut sum = c[0];
        for &v in &c[1..horizon] {
            sum += zk * v;
            zk *= z;
        }
        sum
    } else {
        // Closed form over the full mirrored period.
        let iz = 1.0 / z;
        let mut zk = z;
        let mut z2n = z.powi(2 * (n as i32 - 1) - 1);
        let mut sum = c[0] + z.powi(n as i32 - 1) * c[n - 1];
        for &v in &c[1..n - 1] {
            sum += (zk + z2n) * v;
            zk *= z;
            z2n *= iz;
        }
        sum / (1.0 - z.powi(2 * (n as i32 - 1)))
    }
}

fn eval_bspline3(coeffs: &[f64], t: f64) -> f64 {
    let n = coeffs.len();
    if n == 1 {
        return coeffs[0];
    }
    let base = t.floor() as isize;
    let f = t - base as f64;
    let mut acc = 0.0;
    for d in -1..=2isize {
        let w = bspline3_kernel(f - d as f64);
        if w != 0.0 {
            acc += w * coeffs[mirror(base + d, n)];
        }
    }
    acc
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn lanczos3_kernel(x: f64) -> f64 {
    if x.abs() >= 3.0 {
        0.0
    } else {
        sinc(x) * sinc(x / 3.0)
    }
}

fn eval_lanczos3(samples: &[f64], t: f64) -> f64 {
    let n = samples.len();
    // Taps with |t - k| < 3; at integer t only the center tap survives.
    let k_lo = (t - 3.0).floor() as isize + 1;
    let k_hi = (t + 3.0).ceil() as isize - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in k_lo..=k_hi {
        let w = lanczos3_kernel(t - k as f64);
        if w != 0.0 {
            num += w * samples[mirror(k, n)];
            den += w;
        }
    }
    num / den
}

/// Upsample the through-plane axis by integer `factor`, treating every voxel
/// column as an independent 1D sequence. Acquired slices are copied verbatim
/// at output indices that are multiples of `factor`.
pub fn upsample_through_plane(v: &Volume, factor: usize, kind: InterpKind) -> Result<Volume> {
    let (n, rows, cols) = v.dims();
    if n < 2 {
        return Err(Error::Size(format!(
            "through-plane upsampling needs at least 2 slices, got {n}"
        )));
    }
    if factor < 1 {
        return Err(Error::Domain("upsampling factor must be >= 1".into()));
    }
    let out_n = (n - 1) * factor + 1;
    let mut out = vec![0.0f32; out_n * rows * cols];

    // Copy originals bit-exactly.
    for k in 0..n {
        let src = v.slice_data(k);
        let dst_off = (k * factor) * rows * cols;
        out[dst_off..dst_off + rows * cols].copy_from_slice(src);
    }

    if factor > 1 {
        let plane = rows * cols;
        let mut column = vec![0.0f64; n];
        for i in 0..rows {
            for j in 0..cols {
                let off = i * cols + j;
                for (k, c) in column.iter_mut().enumerate() {
                    *c = v.data()[k * plane + off] as f64;
                }
                let interp = Interpolator1D::new(kind, &column)?;
                for ko in 0..out_n {
                    if ko % factor != 0 {
                        let t = ko as f64 / factor as f64;
                        out[ko * plane + off] = interp.eval(t)? as f32;
                    }
                }
            }
        }
    }

    let spacing = v.spacing();
    Volume::new(
        out,
        (out_n, rows, cols),
        (
            spacing.through_mm / factor as f32,
            spacing.row_mm,
            spacing.col_mm,
        ),
        v.provenance().to_string(),
    )
}
