//! Shared test oracles: a straight-line f64 re-implementation of every
//! network operation (independent of the tape engine) plus central
//! finite-difference machinery built on it.

#![allow(dead_code)]

use aniso_sr::autodiff::WeightKind;
use aniso_sr::autoencoder::{AeConfig, Autoencoder};
use aniso_sr::rng::SplitMix64;

/// Plain f64 tensor for the reference path.
#[derive(Debug, Clone)]
pub struct RefTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn from_f32(shape: &[usize], data: &[f32]) -> RefTensor {
        RefTensor {
            shape: shape.to_vec(),
            data: data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }
}

/// Naive six-loop cross-correlation with zero padding, stride 1.
pub fn ref_conv2d(x: &RefTensor, w: &RefTensor, b: &[f64], padding: usize) -> RefTensor {
    let (n, c, h, wd) = x.dims4();
    let (o, cw, kh, kw) = w.dims4();
    assert_eq!(c, cw);
    let oh = h + 2 * padding + 1 - kh;
    let ow = wd + 2 * padding + 1 - kw;
    let mut out = vec![0.0f64; n * o * oh * ow];
    for ni in 0..n {
        for co in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy + ky;
                                let ix = ox + kx;
                                if iy < padding || ix < padding {
                                    continue;
                                }
                                let (iy, ix) = (iy - padding, ix - padding);
                                if iy >= h || ix >= wd {
                                    continue;
                                }
                                let xv = x.data[((ni * c + ci) * h + iy) * wd + ix];
                                let wv = w.data[((co * c + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    RefTensor {
        shape: vec![n, o, oh, ow],
        data: out,
    }
}

pub fn ref_leaky_relu(x: &RefTensor, slope: f64) -> RefTensor {
    RefTensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
    }
}

/// Train-mode batch norm over (N, H, W) per channel; biased variance for
/// normalization, like the engine.
pub fn ref_batch_norm_train(x: &RefTensor, gamma: &[f64], beta: &[f64], eps: f64) -> RefTensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut out = vec![0.0f64; x.data.len()];
    for ch in 0..c {
        let mut sum = 0.0;
        for ni in 0..n {
            for i in 0..plane {
                sum += x.data[(ni * c + ch) * plane + i];
            }
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for ni in 0..n {
            for i in 0..plane {
                let d = x.data[(ni * c + ch) * plane + i] - mean;
                sq += d * d;
            }
        }
        let inv_std = 1.0 / (sq / count + eps).sqrt();
        for ni in 0..n {
            for i in 0..plane {
                let idx = (ni * c + ch) * plane + i;
                out[idx] = gamma[ch] * ((x.data[idx] - mean) * inv_std) + beta[ch];
            }
        }
    }
    RefTensor {
        shape: x.shape.clone(),
        data: out,
    }
}

pub fn ref_batch_norm_eval(
    x: &RefTensor,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> RefTensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut out = vec![0.0f64; x.data.len()];
    for ch in 0..c {
        let inv_std = 1.0 / (var[ch] + eps).sqrt();
        for ni in 0..n {
            for i in 0..plane {
                let idx = (ni * c + ch) * plane + i;
                out[idx] = gamma[ch] * ((x.data[idx] - mean[ch]) * inv_std) + beta[ch];
            }
        }
    }
    RefTensor {
        shape: x.shape.clone(),
        data: out,
    }
}

pub fn ref_avg_pool2(x: &RefTensor) -> RefTensor {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; n * c * oh * ow];
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = p * h * w;
                let s = x.data[base + 2 * oy * w + 2 * ox]
                    + x.data[base + 2 * oy * w + 2 * ox + 1]
                    + x.data[base + (2 * oy + 1) * w + 2 * ox]
                    + x.data[base + (2 * oy + 1) * w + 2 * ox + 1];
                out[p * oh * ow + oy * ow + ox] = 0.25 * s;
            }
        }
    }
    RefTensor {
        shape: vec![n, c, oh, ow],
        data: out,
    }
}

pub fn ref_upsample2(x: &RefTensor) -> RefTensor {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f64; n * c * oh * ow];
    for p in 0..n * c {
        for y in 0..h {
            for x_ in 0..w {
                let v = x.data[p * h * w + y * w + x_];
                let base = p * oh * ow + 2 * y * ow + 2 * x_;
                out[base] = v;
                out[base + 1] = v;
                out[base + ow] = v;
                out[base + ow + 1] = v;
            }
        }
    }
    RefTensor {
        shape: vec![n, c, oh, ow],
        data: out,
    }
}

pub fn ref_mse(pred: &RefTensor, target: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &t) in pred.data.iter().zip(target.iter()) {
        acc += (p - t) * (p - t);
    }
    acc / pred.data.len() as f64
}

/// The autoencoder forward in f64, driven by a f64 copy of the model's
/// weight table so finite-difference perturbations are exact. Layer order
/// and semantics mirror the production architecture; train-mode batch norm
/// uses batch statistics.
#[derive(Clone)]
pub struct RefAutoencoder {
    pub cfg: AeConfig,
    entries: Vec<RefEntry>,
}

#[derive(Clone)]
struct RefEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

enum RefLayer {
    Conv(String),
    Act,
    NormTrain(String),
    Pool,
    Up,
}

impl RefAutoencoder {
    pub fn from_model(model: &Autoencoder) -> RefAutoencoder {
        let entries = model
            .weights()
            .entries()
            .iter()
            .map(|e| RefEntry {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                data: e.tensor.data().iter().map(|&v| v as f64).collect(),
            })
            .collect();
        RefAutoencoder {
            cfg: *model.config(),
            entries,
        }
    }

    /// Copy with one weight element replaced (exact f64 perturbation).
    pub fn clone_with(&self, name: &str, elem: usize, value: f64) -> RefAutoencoder {
        let mut out = self.clone();
        let entry = out
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("missing weight {name}"));
        entry.data[elem] = value;
        out
    }

    fn layer_plan(&self) -> Vec<RefLayer> {
        let mut plan = Vec::new();
        for block in 0..self.cfg.blocks {
            plan.push(RefLayer::Conv(format!("enc.block{block}.conv1")));
            plan.push(RefLayer::Act);
            plan.push(RefLayer::Conv(format!("enc.block{block}.conv2")));
            plan.push(RefLayer::Act);
            plan.push(RefLayer::NormTrain(format!("enc.block{block}.bn")));
            plan.push(RefLayer::Pool);
        }
        plan.push(RefLayer::Conv("enc.tail.conv1".into()));
        plan.push(RefLayer::Act);
        plan.push(RefLayer::Conv("enc.tail.conv2".into()));
        plan.push(RefLayer::Conv("dec.head.conv1".into()));
        plan.push(RefLayer::Act);
        plan.push(RefLayer::Conv("dec.head.conv2".into()));
        plan.push(RefLayer::Act);
        for block in 0..self.cfg.blocks {
            plan.push(RefLayer::Conv(format!("dec.block{block}.conv1")));
            plan.push(RefLayer::Act);
            plan.push(RefLayer::Conv(format!("dec.block{block}.conv2")));
            plan.push(RefLayer::Act);
            plan.push(RefLayer::NormTrain(format!("dec.block{block}.bn")));
            plan.push(RefLayer::Up);
        }
        plan.push(RefLayer::Conv("dec.tail.conv1".into()));
        plan.push(RefLayer::Act);
        plan.push(RefLayer::Conv("dec.tail.conv2".into()));
        plan
    }

    fn tensor_f64(&self, name: &str) -> (Vec<usize>, Vec<f64>) {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .unwrap_or_else(|| panic!("missing weight {name}"));
        (e.shape.clone(), e.data.clone())
    }

    /// Full train-mode forward on [N,1,H,W] data; wiring must match the
    /// production model.
    pub fn forward_train(&self, x: &RefTensor) -> RefTensor {
        let slope = self.cfg.leaky_slope as f64;
        let mut cur = x.clone();
        let mut last_conv: Option<String> = None;
        for layer in self.layer_plan() {
            cur = match layer {
                RefLayer::Conv(name) => {
                    let (wshape, wdata) = self.tensor_f64(&format!("{name}.w"));
                    let (_, bdata) = self.tensor_f64(&format!("{name}.b"));
                    last_conv = Some(name);
                    ref_conv2d(
                        &cur,
                        &RefTensor {
                            shape: wshape,
                            data: wdata,
                        },
                        &bdata,
                        1,
                    )
                }
                RefLayer::Act => ref_leaky_relu(&cur, slope),
                RefLayer::NormTrain(name) => {
                    let (_, gamma) = self.tensor_f64(&format!("{name}.gamma"));
                    let (_, beta) = self.tensor_f64(&format!("{name}.beta"));
                    ref_batch_norm_train(&cur, &gamma, &beta, 1e-5)
                }
                RefLayer::Pool => ref_avg_pool2(&cur),
                RefLayer::Up => ref_upsample2(&cur),
            };
        }
        let _ = last_conv;
        cur
    }

    /// Training loss of the reference forward against a fixed target.
    pub fn loss(&self, x: &RefTensor, target: &[f64]) -> f64 {
        ref_mse(&self.forward_train(x), target)
    }
}

/// Straight-line SSIM reference: per-window weighted moments by explicit
/// summation, no separable-convolution tricks.
pub fn ref_ssim(a: &[f32], b: &[f32], rows: usize, cols: usize) -> f64 {
    const WINDOW: usize = 11;
    const SIGMA: f64 = 1.5;
    let half = (WINDOW / 2) as isize;
    let mut kernel = Vec::with_capacity(WINDOW);
    for i in -half..=half {
        kernel.push((-(i as f64).powi(2) / (2.0 * SIGMA * SIGMA)).exp());
    }
    let ksum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= ksum;
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for top in 0..=(rows - WINDOW) {
        for left in 0..=(cols - WINDOW) {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..WINDOW {
                for dj in 0..WINDOW {
                    let w = kernel[di] * kernel[dj];
                    let x = a[(top + di) * cols + (left + dj)] as f64;
                    let y = b[(top + di) * cols + (left + dj)] as f64;
                    mx += w * x;
                    my += w * y;
                    mxx += w * x * x;
                    myy += w * y * y;
                    mxy += w * x * y;
                }
            }
            let (vx, vy, cov) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Straight-line pixel-domain VIF reference implementing the same recipe
/// as the library (sigma_s = 2^s/5 Gaussian as both decimation prefilter
/// and statistics window, decimate by 2 at scales > 1, sigma_nsq = 2),
/// with direct windowed sums instead of separable passes.
pub fn ref_vif(a: &[f32], b: &[f32], rows: usize, cols: usize) -> f64 {
    let mut r: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let mut t: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let (mut rows, mut cols) = (rows, cols);
    let sigma_nsq = 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 1..=4u32 {
        let sigma = 2f64.powi(s as i32) / 5.0;
        let support = 2 * (3.0 * sigma).ceil() as usize + 1;
        let kernel = ref_gauss(sigma, support);
        if s > 1 {
            if rows < support || cols < support {
                break;
            }
            let (rs, nr, nc) = ref_window_conv(&r, rows, cols, &kernel);
            let (ts, _, _) = ref_window_conv(&t, rows, cols, &kernel);
            let (rd, dr, dc) = ref_decimate2(&rs, nr, nc);
            let (td, _, _) = ref_decimate2(&ts, nr, nc);
            r = rd;
            t = td;
            rows = dr;
            cols = dc;
        }
        if rows < support || cols < support {
            break;
        }
        for top in 0..=(rows - support) {
            for left in 0..=(cols - support) {
                let (mut mr, mut mt, mut mrr, mut mtt, mut mrt) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..support {
                    for dj in 0..support {
                        let w = kernel[di] * kernel[dj];
                        let x = r[(top + di) * cols + (left + dj)];
                        let y = t[(top + di) * cols + (left + dj)];
                        mr += w * x;
                        mt += w * y;
                        mrr += w * x * x;
                        mtt += w * y * y;
                        mrt += w * x * y;
                    }
                }
                let var_r = mrr - mr * mr;
                let var_t = mtt - mt * mt;
                let cov = mrt - mr * mt;
                let g = cov / (var_r + 1e-10);
                let sv_sq = var_t - g * cov;
                num += (1.0 + g * g * var_r / (sv_sq + sigma_nsq)).log2();
                den += (1.0 + var_r / sigma_nsq).log2();
            }
        }
    }
    num / den
}

fn ref_gauss(sigma: f64, support: usize) -> Vec<f64> {
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

fn ref_window_conv(img: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let orows = rows - k + 1;
    let ocols = cols - k + 1;
    let mut out = vec![0.0; orows * ocols];
    for i in 0..orows {
        for j in 0..ocols {
            let mut acc = 0.0;
            for di in 0..k {
                for dj in 0..k {
                    acc += kernel[di] * kernel[dj] * img[(i + di) * cols + (j + dj)];
                }
            }
            out[i * ocols + j] = acc;
        }
    }
    (out, orows, ocols)
}

fn ref_decimate2(img: &[f64], rows: usize, cols: usize) -> (Vec<f64>, usize, usize) {
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

/// Central finite difference of `f` at `x0` with the step rule
/// h = scale * max(1, |x0|), all in f64.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, scale: f64) -> f64 {
    let h = scale * x0.abs().max(1.0);
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Gradient-check acceptance rule: relative error < 1e-3 with an absolute
/// floor of 1e-6.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    if diff <= 1e-6 {
        return true;
    }
    diff / analytic.abs().max(numeric.abs()) < 1e-3
}

/// Deterministic random tensor data in [-0.5, 0.5).
pub fn random_data(rng: &mut SplitMix64, n: usize) -> Vec<f32> {
    (0..n).map(|_| (rng.next_f64() - 0.5) as f32).collect()
}

/// Random data in [0, 1) (image-like).
pub fn random_unit_data(rng: &mut SplitMix64, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.next_f32()).collect()
}

/// Indices of parameter entries in a model's weight table.
pub fn param_entries(model: &Autoencoder) -> Vec<usize> {
    model
        .weights()
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == WeightKind::Param)
        .map(|(i, _)| i)
        .collect()
}
