//! Full-reference image quality metrics and the one-sided Wilcoxon
//! signed-rank test used to compare methods.
//!
//! All metrics run in 64-bit arithmetic over f32 slices. VIF is the
//! pixel-domain variant (reported as "VIFp" everywhere); PSNR assumes
//! intensities normalized to [0, 1] unless another peak is given.

use crate::error::{Error, Result};
use crate::volume::Slice;

/// SSIM window: 11x11 Gaussian, sigma 1.5.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// VIF: four scales, Gaussian-scale-mixture noise variance 2.0.
const VIF_SCALES: u32 = 4;
const VIF_SIGMA_NSQ: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;

/// Metric triple for one reference/test pair. `psnr_db` is `f64::INFINITY`
/// for identical images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricResult {
    pub psnr_db: f64,
    pub ssim: f64,
    pub vif: f64,
}

pub fn all_metrics(reference: &Slice, test: &Slice) -> Result<MetricResult> {
    Ok(MetricResult {
        psnr_db: psnr(reference, test, 1.0)?,
        ssim: ssim(reference, test)?,
        vif: vif(reference, test)?,
    })
}

fn check_same_shape(reference: &Slice, test: &Slice) -> Result<()> {
    if reference.rows() != test.rows() || reference.cols() != test.cols() {
        return Err(Error::Shape(format!(
            "reference is {}x{}, test is {}x{}",
            reference.rows(),
            reference.cols(),
            test.rows(),
            test.cols()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; infinite when the images are identical.
pub fn psnr(reference: &Slice, test: &Slice, peak: f64) -> Result<f64> {
    check_same_shape(reference, test)?;
    if peak <= 0.0 || peak.is_nan() {
        return Err(Error::Domain(format!("peak must be positive, got {peak}")));
    }
    let mut acc = 0.0f64;
    for (&r, &t) in reference.data().iter().zip(test.data().iter()) {
        let d = r as f64 - t as f64;
        acc += d * d;
    }
    let mse = acc / reference.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}

/// Structural similarity index, mean over valid window positions.
pub fn ssim(reference: &Slice, test: &Slice) -> Result<f64> {
    check_same_shape(reference, test)?;
    let (rows, cols) = (reference.rows(), reference.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {rows}x{cols} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let kernel = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW);
    let x: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = test.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a * b).collect();

    let (mu_x, orows, ocols) = conv_valid_sep(&x, rows, cols, &kernel);
    let (mu_y, _, _) = conv_valid_sep(&y, rows, cols, &kernel);
    let (m_xx, _, _) = conv_valid_sep(&xx, rows, cols, &kernel);
    let (m_yy, _, _) = conv_valid_sep(&yy, rows, cols, &kernel);
    let (m_xy, _, _) = conv_valid_sep(&xy, rows, cols, &kernel);

    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let mut acc = 0.0f64;
    for i in 0..orows * ocols {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
    }
    Ok(acc / (orows * ocols) as f64)
}

/// Pixel-domain visual information fidelity (VIFp).
///
/// Per scale s = 1..4 the working images are smoothed with a Gaussian of
/// sigma 2^s / 5 (and decimated by 2 for s > 1); the same Gaussian is the
/// local-statistics window. Scales whose window no longer fits the
/// decimated image contribute nothing.
pub fn vif(reference: &Slice, test: &Slice) -> Result<f64> {
    check_same_shape(reference, test)?;
    let mut r: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    let mut t: Vec<f64> = test.data().iter().map(|&v| v as f64).collect();
    let mut rows = reference.rows();
    let mut cols = reference.cols();

    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for s in 1..=VIF_SCALES {
        let sigma = 2f64.powi(s as i32) / 5.0;
        let support = 2 * (3.0 * sigma).ceil() as usize + 1;
        let kernel = gaussian_kernel(sigma, support);
        if s > 1 {
            if rows < support || cols < support {
                break;
            }
            let (rs, nr, nc) = conv_valid_sep(&r, rows, cols, &kernel);
            let (ts, _, _) = conv_valid_sep(&t, rows, cols, &kernel);
            let (rd, dr, dc) = decimate2(&rs, nr, nc);
            let (td, _, _) = decimate2(&ts, nr, nc);
            r = rd;
            t = td;
            rows = dr;
            cols = dc;
        }
        if rows < support || cols < support {
            break;
        }
        let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
        let tt: Vec<f64> = t.iter().map(|v| v * v).collect();
        let rt: Vec<f64> = r.iter().zip(t.iter()).map(|(a, b)| a * b).collect();
        let (mu_r, orows, ocols) = conv_valid_sep(&r, rows, cols, &kernel);
        let (mu_t, _, _) = conv_valid_sep(&t, rows, cols, &kernel);
        let (m_rr, _, _) = conv_valid_sep(&rr, rows, cols, &kernel);
        let (m_tt, _, _) = conv_valid_sep(&tt, rows, cols, &kernel);
        let (m_rt, _, _) = conv_valid_sep(&rt, rows, cols, &kernel);
        for i in 0..orows * ocols {
            let var_r = m_rr[i] - mu_r[i] * mu_r[i];
            let var_t = m_tt[i] - mu_t[i] * mu_t[i];
            let cov = m_rt[i] - mu_r[i] * mu_t[i];
            let g = cov / (var_r + VIF_EPS);
            let sv_sq = var_t - g * cov;
            num += (1.0 + g * g * var_r / (sv_sq + VIF_SIGMA_NSQ)).log2();
            den += (1.0 + var_r / VIF_SIGMA_NSQ).log2();
        }
    }
    if den == 0.0 {
        return Err(Error::Degenerate(
            "reference image carries no local variance; VIF undefined".into(),
        ));
    }
    Ok(num / den)
}

/// Normalized 1D Gaussian taps of odd length `support`.
pub(crate) fn gaussian_kernel(sigma: f64, support: usize) -> Vec<f64> {
    debug_assert!(support % 2 == 1);
    let half = (support / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode convolution with a symmetric 1D kernel.
pub(crate) fn conv_valid_sep(
    img: &[f64],
    rows: usize,
    cols: usize,
    kernel: &[f64],
) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    debug_assert!(rows >= k && cols >= k);
    let ocols = cols - k + 1;
    let orows = rows - k + 1;
    // Horizontal pass.
    let mut h = vec![0.0f64; rows * ocols];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        let out = &mut h[r * ocols..(r + 1) * ocols];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (d, &w) in kernel.iter().enumerate() {
                acc += w * row[j + d];
            }
            *o = acc;
        }
    }
    // Vertical pass.
    let mut v = vec![0.0f64; orows * ocols];
    for i in 0..orows {
        let out = &mut v[i * ocols..(i + 1) * ocols];
        for (d, &w) in kernel.iter().enumerate() {
            let row = &h[(i + d) * ocols..(i + d + 1) * ocols];
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o += w * x;
            }
        }
    }
    (v, orows, ocols)
}

fn decimate2(img: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize, usize) {
    let orows = rows.div_ceil(2);
    let ocols = cols.div_ceil(2);
    let mut out = Vec::with_capacity(orows * ocols);
    for i in (0..rows).step_by(2) {
        for j in (0..cols).step_by(2) {
            out.push(img[i * cols + j]);
        }
    }
    (out, orows, ocols)
}

/// One-sided Wilcoxon signed-rank test of H1: `a > b` on paired samples.
///
/// Signed ranks of |a - b| with average ranks for ties; zero differences
/// are dropped. Exact tail probability for n <= 20 (subset-sum count over
/// the realized rank multiset), normal approximation with tie and
/// continuity correction beyond.
pub fn wilcoxon_one_sided_greater(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate(
            "all paired differences are zero; no signed ranks to test".into(),
        ));
    }
    if diffs.len() < 5 {
        return Err(Error::Contract(format!(
            "need at least 5 nonzero differences, got {}",
            diffs.len()
        )));
    }
    let n = diffs.len();

    // Sort by |d| and assign doubled average ranks (integers even with ties).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut rank2 = vec![0u64; n];
    let mut tie_correction = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg2 = (i + 1 + j) as u64; // 2x the average rank of positions i..j
        for &idx in &order[i..j] {
            rank2[idx] = avg2;
        }
        let t = (j - i) as f64;
        tie_correction += t * (t * t - 1.0);
        i = j;
    }
    let w2_plus: u64 = diffs
        .iter()
        .zip(rank2.iter())
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();

    if n <= 20 {
        Ok(exact_upper_tail(&rank2, w2_plus))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_correction / 48.0;
        if var <= 0.0 {
            return Err(Error::Degenerate("zero variance in the rank statistic".into()));
        }
        let w_plus = w2_plus as f64 / 2.0;
        let z = (w_plus - mean - 0.5) / var.sqrt();
        Ok(1.0 - normal_cdf(z))
    }
}

/// P(W2+ >= observed) under the null, by counting sign assignments with a
/// subset-sum table over the doubled ranks.
fn exact_upper_tail(rank2: &[u64], observed: u64) -> f64 {
    let total: u64 = rank2.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &r in rank2 {
        let r = r as usize;
        for s in (r..counts.len()).rev() {
            counts[s] += counts[s - r];
        }
    }
    let tail: u64 = counts[observed as usize..].iter().sum();
    tail as f64 / 2f64.powi(rank2.len() as i32)
}

fn erfc_approx(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc_approx(-z / std::f64::consts::SQRT_2)
}
