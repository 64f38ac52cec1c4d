//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! verdict line (run with `--nocapture` to see them).

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use aniso_sr::autodiff::{load_weights, save_weights, Tape, Tensor};
use aniso_sr::autoencoder::{latent_mix, AeConfig, Autoencoder};
use aniso_sr::baselines::{interp_bspline3, interp_lanczos3, interp_linear};
use aniso_sr::eval::{
    evaluate_volumes, export_report, parse_records_csv, render_records_csv, summarize, Method,
    MetricKind, ALL_METHODS,
};
use aniso_sr::io::{load_volume, write_volume, VolumeFormat};
use aniso_sr::metrics::{psnr, ssim, vif, wilcoxon_one_sided_greater};
use aniso_sr::rng::SplitMix64;
use aniso_sr::synth::{phantom_dataset, PhantomConfig};
use aniso_sr::trainer::{train, validation_mse, TrainConfig};
use aniso_sr::volume::{Slice, Volume};
use common::*;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {id:02} {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("aniso-sr-accept-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------------------
// criterion 1: gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_correctness() {
    let t0 = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    // Per-op finite-difference checks at the h = 1e-2*max(1,|x|) rule for
    // the smooth ops (conv, pool, upsample, mse) and the leaky-relu away
    // from its kink; batch norm is curved enough to need a smaller step
    // (see the gradients test file for the measurement).
    per_op_checks(&mut failures);

    // Full 32x32 autoencoder: >= 20 randomly sampled parameters against the
    // f64 reference, differentiated at 1e-7 where the secant is sound.
    let cfg = AeConfig {
        input_rows: 32,
        input_cols: 32,
        ..AeConfig::default()
    };
    let mut model = Autoencoder::new(cfg, 41).unwrap();
    let mut rng = SplitMix64::new(42);
    let xd = random_unit_data(&mut rng, 32 * 32);
    let target = random_unit_data(&mut rng, 32 * 32);
    let target64: Vec<f64> = target.iter().map(|&v| v as f64).collect();

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 32, 32], xd.clone()).unwrap());
    let (recon, bindings) = model.forward_train(&mut tape, x).unwrap();
    let t = tape.leaf(Tensor::new(vec![1, 1, 32, 32], target).unwrap());
    let loss = tape.mse_loss(recon, t).unwrap();
    tape.backward(loss).unwrap();

    let reference = RefAutoencoder::from_model(&model);
    let rx = RefTensor::from_f32(&[1, 1, 32, 32], &xd);
    let mut probe_rng = SplitMix64::new(43);
    for probe in 0..20 {
        let (entry_idx, node) = bindings[probe_rng.next_index(bindings.len())];
        let tensor = &model.weights().entry(entry_idx).tensor;
        let elem = probe_rng.next_index(tensor.numel());
        let analytic = tape.grad(node).unwrap()[elem] as f64;
        let base = tensor.data()[elem] as f64;
        let name = model.weights().entry(entry_idx).name.clone();
        let numeric = central_diff(
            |v| reference.clone_with(&name, elem, v).loss(&rx, &target64),
            base,
            1e-7,
        );
        if !grad_close(analytic, numeric) {
            failures.push(format!(
                "net probe {probe} {name}[{elem}]: {analytic} vs {numeric}"
            ));
        }
    }

    let secs = t0.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    verdict(
        1,
        "gradient-correctness",
        pass,
        &format!(
            "{} op coords + 20 net params checked, {} failures, {secs:.1}s (< 120s)",
            OP_COORDS_CHECKED,
            failures.len()
        ),
    );
    for f in failures {
        eprintln!("  {f}");
    }
}

const OP_COORDS_CHECKED: usize = 96;

fn per_op_checks(failures: &mut Vec<String>) {
    let mut rng = SplitMix64::new(44);

    // conv2d (x, w, b): 1x2x5x5 into 3 channels.
    {
        let (n, c, o, h, w) = (1usize, 2usize, 3usize, 5usize, 5usize);
        let xd = random_data(&mut rng, n * c * h * w);
        let wd = random_data(&mut rng, o * c * 9);
        let bd = random_data(&mut rng, o);
        let td = random_data(&mut rng, n * o * h * w);
        let td64: Vec<f64> = td.iter().map(|&v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], xd.clone()).unwrap().with_requires_grad(true));
        let wt = tape.leaf(Tensor::new(vec![o, c, 3, 3], wd.clone()).unwrap().with_requires_grad(true));
        let b = tape.leaf(Tensor::new(vec![o], bd.clone()).unwrap().with_requires_grad(true));
        let y = tape.conv2d(x, wt, b, 1).unwrap();
        let t = tape.leaf(Tensor::new(vec![n, o, h, w], td).unwrap());
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        let ref_loss = |xd: &[f32], wd: &[f32], bd: &[f32]| {
            let rx = RefTensor::from_f32(&[n, c, h, w], xd);
            let rw = RefTensor::from_f32(&[o, c, 3, 3], wd);
            let rb: Vec<f64> = bd.iter().map(|&v| v as f64).collect();
            ref_mse(&ref_conv2d(&rx, &rw, &rb, 1), &td64)
        };
        let mut probe = SplitMix64::new(45);
        for _ in 0..20 {
            let i = probe.next_index(xd.len());
            let g = tape.grad(x).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = xd.clone();
                    p[i] = v as f32;
                    ref_loss(&p, &wd, &bd)
                },
                xd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("conv dx[{i}]: {g} vs {fd}"));
            }
        }
        for _ in 0..20 {
            let i = probe.next_index(wd.len());
            let g = tape.grad(wt).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = wd.clone();
                    p[i] = v as f32;
                    ref_loss(&xd, &p, &bd)
                },
                wd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("conv dw[{i}]: {g} vs {fd}"));
            }
        }
        for i in 0..o {
            let g = tape.grad(b).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = bd.clone();
                    p[i] = v as f32;
                    ref_loss(&xd, &wd, &p)
                },
                bd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("conv db[{i}]: {g} vs {fd}"));
            }
        }
    }

    // leaky_relu away from the kink.
    {
        let n = 16;
        let xd: Vec<f32> = (0..n)
            .map(|_| {
                let v = rng.next_f64() * 0.8 + 0.2;
                (if rng.next_u64().is_multiple_of(2) { v } else { -v }) as f32
            })
            .collect();
        let td = random_data(&mut rng, n);
        let td64: Vec<f64> = td.iter().map(|&v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n], xd.clone()).unwrap().with_requires_grad(true));
        let y = tape.leaky_relu(x, 0.01);
        let t = tape.leaf(Tensor::new(vec![n], td).unwrap());
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        for i in 0..n {
            let g = tape.grad(x).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut acc = 0.0;
                    for (j, &xv) in xd.iter().enumerate() {
                        let xj = if j == i { v } else { xv as f64 };
                        let yj = if xj > 0.0 { xj } else { 0.01 * xj };
                        acc += (yj - td64[j]) * (yj - td64[j]);
                    }
                    acc / n as f64
                },
                xd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("lrelu dx[{i}]: {g} vs {fd}"));
            }
        }
    }

    // batch_norm2d (train) on 2x2x2x2: smaller step, see module note.
    {
        let (n, c, h, w) = (2usize, 2usize, 2usize, 2usize);
        let xd = random_data(&mut rng, n * c * h * w);
        let gd = vec![1.1f32, 0.9];
        let bdta = vec![0.05f32, -0.1];
        let td = random_data(&mut rng, n * c * h * w);
        let td64: Vec<f64> = td.iter().map(|&v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], xd.clone()).unwrap().with_requires_grad(true));
        let gamma = tape.leaf(Tensor::new(vec![c], gd.clone()).unwrap().with_requires_grad(true));
        let beta = tape.leaf(Tensor::new(vec![c], bdta.clone()).unwrap().with_requires_grad(true));
        let mut rm = vec![0.0f32; c];
        let mut rv = vec![1.0f32; c];
        let y = tape
            .batch_norm2d(
                x,
                gamma,
                beta,
                &mut rm,
                &mut rv,
                aniso_sr::autodiff::BnMode::Train,
                0.1,
                1e-5,
            )
            .unwrap();
        let t = tape.leaf(Tensor::new(vec![n, c, h, w], td).unwrap());
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        let ref_loss = |xd: &[f32]| {
            let rx = RefTensor::from_f32(&[n, c, h, w], xd);
            let g64: Vec<f64> = gd.iter().map(|&v| v as f64).collect();
            let b64: Vec<f64> = bdta.iter().map(|&v| v as f64).collect();
            ref_mse(&ref_batch_norm_train(&rx, &g64, &b64, 1e-5), &td64)
        };
        for i in 0..xd.len() {
            let g = tape.grad(x).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = xd.clone();
                    p[i] = v as f32;
                    ref_loss(&p)
                },
                xd[i] as f64,
                1e-4,
            );
            if !grad_close(g, fd) {
                failures.push(format!("bn dx[{i}]: {g} vs {fd}"));
            }
        }
    }

    // avg_pool2d / upsample_nearest2d / mse on one 4x4 fixture each.
    {
        let (n, c, h, w) = (1usize, 1usize, 4usize, 4usize);
        let xd = random_data(&mut rng, h * w);
        let tdp = random_data(&mut rng, 4);
        let tdp64: Vec<f64> = tdp.iter().map(|&v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], xd.clone()).unwrap().with_requires_grad(true));
        let y = tape.avg_pool2d(x).unwrap();
        let t = tape.leaf(Tensor::new(vec![n, c, 2, 2], tdp).unwrap());
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        for i in 0..xd.len() {
            let g = tape.grad(x).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = xd.clone();
                    p[i] = v as f32;
                    let rx = RefTensor::from_f32(&[n, c, h, w], &p);
                    ref_mse(&ref_avg_pool2(&rx), &tdp64)
                },
                xd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("pool dx[{i}]: {g} vs {fd}"));
            }
        }

        let tdu = random_data(&mut rng, h * w * 4);
        let tdu64: Vec<f64> = tdu.iter().map(|&v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], xd.clone()).unwrap().with_requires_grad(true));
        let y = tape.upsample_nearest2d(x).unwrap();
        let t = tape.leaf(Tensor::new(vec![n, c, 2 * h, 2 * w], tdu).unwrap());
        let loss = tape.mse_loss(y, t).unwrap();
        tape.backward(loss).unwrap();
        for i in 0..xd.len() {
            let g = tape.grad(x).unwrap()[i] as f64;
            let fd = central_diff(
                |v| {
                    let mut p = xd.clone();
                    p[i] = v as f32;
                    let rx = RefTensor::from_f32(&[n, c, h, w], &p);
                    ref_mse(&ref_upsample2(&rx), &tdu64)
                },
                xd[i] as f64,
                1e-2,
            );
            if !grad_close(g, fd) {
                failures.push(format!("upsample dx[{i}]: {g} vs {fd}"));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 2: convolution oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_conv_oracle_equivalence() {
    let mut rng = SplitMix64::new(50);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 1 + rng.next_index(2);
        let c = 1 + rng.next_index(4);
        let o = 1 + rng.next_index(4);
        let h = 3 + rng.next_index(6); // 3..8
        let w = 3 + rng.next_index(6);
        let xd = random_data(&mut rng, n * c * h * w);
        let wd = random_data(&mut rng, o * c * 9);
        let bd = random_data(&mut rng, o);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![n, c, h, w], xd.clone()).unwrap());
        let wt = tape.leaf(Tensor::new(vec![o, c, 3, 3], wd.clone()).unwrap());
        let b = tape.leaf(Tensor::new(vec![o], bd.clone()).unwrap());
        let y = tape.conv2d(x, wt, b, 1).unwrap();
        let rx = RefTensor::from_f32(&[n, c, h, w], &xd);
        let rw = RefTensor::from_f32(&[o, c, 3, 3], &wd);
        let rb: Vec<f64> = bd.iter().map(|&v| v as f64).collect();
        let want = ref_conv2d(&rx, &rw, &rb, 1);
        for (&got, &expect) in tape.value(y).data().iter().zip(want.data.iter()) {
            worst = worst.max((got as f64 - expect).abs());
        }
    }
    verdict(
        2,
        "conv-oracle-equivalence",
        worst < 1e-5,
        &format!("50 random shapes up to 2x4x8x8, max |diff| = {worst:.2e} (< 1e-5)"),
    );
}

// ---------------------------------------------------------------------------
// criterion 3: kernel exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_kernel_exactness() {
    let mut rng = SplitMix64::new(51);
    let mut details = Vec::new();
    let mut pass = true;

    // Linear reproduces affine sequences to 1e-12.
    let affine: Vec<f64> = (0..12).map(|k| -1.5 * k as f64 + 0.25).collect();
    let mut worst = 0.0f64;
    for i in 0..110 {
        let t = i as f64 * 0.1;
        let got = interp_linear(&affine, t).unwrap();
        worst = worst.max((got - (-1.5 * t + 0.25)).abs());
    }
    pass &= worst < 1e-12;
    details.push(format!("affine {worst:.1e}"));

    // Cubic B-spline reproduces cubics at interior points (>= 10 samples
    // from both ends under the mirror boundary) to 1e-5.
    let p = |x: f64| {
        let u = (x - 15.5) / 8.0;
        0.4 * u * u * u - 0.7 * u * u + 0.3 * u + 0.2
    };
    let samples: Vec<f64> = (0..32).map(|k| p(k as f64)).collect();
    let mut worst = 0.0f64;
    for i in 0..=110 {
        let t = 10.0 + i as f64 * 0.1; // interior band [10, 21]
        let got = interp_bspline3(&samples, t).unwrap();
        worst = worst.max((got - p(t)).abs());
    }
    pass &= worst < 1e-5;
    details.push(format!("cubic {worst:.1e}"));

    // All kernels interpolate at integer coordinates to 1e-6 and reproduce
    // constants (linear to 1e-12, others to 1e-9).
    let seq: Vec<f64> = (0..16).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
    let constant = [0.37f64; 16];
    let mut worst_interp = 0.0f64;
    let mut worst_const_linear = 0.0f64;
    let mut worst_const_other = 0.0f64;
    for k in 0..16 {
        let t = k as f64;
        worst_interp = worst_interp.max((interp_linear(&seq, t).unwrap() - seq[k]).abs());
        worst_interp = worst_interp.max((interp_bspline3(&seq, t).unwrap() - seq[k]).abs());
        worst_interp = worst_interp.max((interp_lanczos3(&seq, t).unwrap() - seq[k]).abs());
    }
    for i in 0..=60 {
        let t = i as f64 * 0.25;
        worst_const_linear =
            worst_const_linear.max((interp_linear(&constant, t).unwrap() - 0.37).abs());
        worst_const_other =
            worst_const_other.max((interp_bspline3(&constant, t).unwrap() - 0.37).abs());
        worst_const_other =
            worst_const_other.max((interp_lanczos3(&constant, t).unwrap() - 0.37).abs());
    }
    pass &= worst_interp < 1e-6 && worst_const_linear < 1e-12 && worst_const_other < 1e-9;
    details.push(format!(
        "interp {worst_interp:.1e}, const {worst_const_linear:.1e}/{worst_const_other:.1e}"
    ));

    verdict(3, "kernel-exactness", pass, &details.join(", "));
}

// ---------------------------------------------------------------------------
// criterion 4: metric identities and oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_metric_identities_and_oracles() {
    let mut rng = SplitMix64::new(52);
    let mut pass = true;
    let mut details = Vec::new();

    // Identities on a random 64x64 slice.
    let s = Slice::new(random_unit_data(&mut rng, 64 * 64), 64, 64, (1.4, 1.4)).unwrap();
    let ssim_self = ssim(&s, &s).unwrap();
    let vif_self = vif(&s, &s).unwrap();
    pass &= (ssim_self - 1.0).abs() < 1e-9;
    pass &= (vif_self - 1.0).abs() < 1e-6;
    pass &= psnr(&s, &s, 1.0).unwrap().is_infinite();
    details.push(format!(
        "ssim(x,x)-1={:.1e}, vif(x,x)-1={:.1e}",
        ssim_self - 1.0,
        vif_self - 1.0
    ));

    // Uniform 0.1 error: a decimal 0.1 step is not representable in f32, so
    // the exact gate compares against the closed form at the realized
    // difference; the decimal 20 dB reading holds to f32 resolution.
    let a = Slice::new(vec![0.4; 64 * 64], 64, 64, (1.4, 1.4)).unwrap();
    let b = Slice::new(vec![0.5; 64 * 64], 64, 64, (1.4, 1.4)).unwrap();
    let p = psnr(&a, &b, 1.0).unwrap();
    let d = 0.5f32 as f64 - 0.4f32 as f64;
    let closed_form = 10.0 * (1.0 / (d * d)).log10();
    pass &= (p - closed_form).abs() < 1e-9;
    pass &= (p - 20.0).abs() < 1e-5;
    details.push(format!("psnr-closedform={:.1e}", (p - closed_form).abs()));

    // Five 64x64 fixtures against the straight-line references.
    let mut worst_ssim = 0.0f64;
    let mut worst_vif = 0.0f64;
    for fixture in 0..5 {
        let a_data = random_unit_data(&mut rng, 64 * 64);
        // Mix of noise and blur distortions.
        let b_data: Vec<f32> = match fixture % 2 {
            0 => a_data
                .iter()
                .map(|&v| (v + 0.1 * (rng.next_f32() - 0.5)).clamp(0.0, 1.0))
                .collect(),
            _ => {
                let mut blurred = a_data.clone();
                for i in 1..63usize {
                    for j in 1..63usize {
                        blurred[i * 64 + j] = 0.25
                            * (a_data[i * 64 + j]
                                + a_data[i * 64 + j + 1]
                                + a_data[(i + 1) * 64 + j]
                                + a_data[(i - 1) * 64 + j]);
                    }
                }
                blurred
            }
        };
        let sa = Slice::new(a_data.clone(), 64, 64, (1.4, 1.4)).unwrap();
        let sb = Slice::new(b_data.clone(), 64, 64, (1.4, 1.4)).unwrap();
        worst_ssim = worst_ssim
            .max((ssim(&sa, &sb).unwrap() - ref_ssim(&a_data, &b_data, 64, 64)).abs());
        worst_vif =
            worst_vif.max((vif(&sa, &sb).unwrap() - ref_vif(&a_data, &b_data, 64, 64)).abs());
    }
    pass &= worst_ssim < 1e-6 && worst_vif < 1e-6;
    details.push(format!("ssim-oracle {worst_ssim:.1e}, vif-oracle {worst_vif:.1e}"));

    verdict(4, "metric-identities-and-oracles", pass, &details.join(", "));
}

// ---------------------------------------------------------------------------
// criterion 5: wilcoxon exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_wilcoxon_exactness() {
    // n = 6 uniform improvement: exactly 1/64.
    let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let a: Vec<f64> = b.iter().map(|x| x + 0.5).collect();
    let uniform_exact = wilcoxon_one_sided_greater(&a, &b).unwrap() == 1.0 / 64.0;

    // 100 random fixtures, n <= 12, against full 2^n enumeration.
    let mut rng = SplitMix64::new(53);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 100 {
        let n = 5 + rng.next_index(8); // 5..=12
        let b: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0).collect();
        let a: Vec<f64> = b
            .iter()
            .map(|x| {
                // Mix ties, zero diffs, and both signs.
                match rng.next_index(5) {
                    0 => *x,
                    1 => x + 0.25, // repeated magnitude -> ties
                    2 => x - 0.25,
                    _ => x + rng.next_f64() - 0.45,
                }
            })
            .collect();
        let p = match wilcoxon_one_sided_greater(&a, &b) {
            Ok(p) => p,
            Err(_) => continue, // degenerate draw; try another
        };
        let want = enumeration_p(&a, &b);
        if (p - want).abs() > 1e-12 {
            mismatches += 1;
        }
        checked += 1;
    }
    verdict(
        5,
        "wilcoxon-exactness",
        uniform_exact && mismatches == 0,
        &format!("n=6 uniform p==1/64: {uniform_exact}; {mismatches}/100 enumeration mismatches"),
    );
}

/// Full 2^n enumeration oracle over the realized signed ranks.
fn enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut rank2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && diffs[order[j]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        for &idx in &order[i..j] {
            rank2[idx] = (i + 1 + j) as u64;
        }
        i = j;
    }
    let observed: u64 = diffs
        .iter()
        .zip(rank2.iter())
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let mut count = 0u64;
    for mask in 0..(1u64 << n) {
        let w: u64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| rank2[k]).sum();
        if w >= observed {
            count += 1;
        }
    }
    count as f64 / (1u64 << n) as f64
}

// ---------------------------------------------------------------------------
// criterion 6: latent-mix contracts
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_latent_mix_contracts() {
    let model = Autoencoder::new(
        AeConfig {
            input_rows: 32,
            input_cols: 32,
            ..AeConfig::default()
        },
        54,
    )
    .unwrap();
    let mut rng = SplitMix64::new(55);
    let sa = Slice::new(random_unit_data(&mut rng, 32 * 32), 32, 32, (1.4, 1.4)).unwrap();
    let sb = Slice::new(random_unit_data(&mut rng, 32 * 32), 32, 32, (1.4, 1.4)).unwrap();
    let za = model.encode(&sa).unwrap();
    let zb = model.encode(&sb).unwrap();

    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();

    // Endpoint identity, bit-exact.
    let m0 = latent_mix(&za, &zb, 0.0).unwrap();
    let m1 = latent_mix(&za, &zb, 1.0).unwrap();
    let endpoint_ok = bits(&m0.features) == bits(&za.features) && bits(&m1.features) == bits(&zb.features);

    // mix(z, z, alpha) = z for all alpha.
    let mut self_ok = true;
    for alpha in [0.0f32, 0.2, 0.5, 0.77, 1.0] {
        let m = latent_mix(&za, &za, alpha).unwrap();
        self_ok &= bits(&m.features) == bits(&za.features);
    }

    // superresolve_volume: (n-1)*r + 1 slices, originals bit-exact.
    let mut data = Vec::new();
    for k in 0..5 {
        let s = Slice::new(random_unit_data(&mut rng, 32 * 32), 32, 32, (1.4, 1.4)).unwrap();
        data.extend_from_slice(s.data());
        let _ = k;
    }
    let v = Volume::new(data, (5, 32, 32), (10.0, 1.4, 1.4), "c6".into()).unwrap();
    let mut sr_ok = true;
    for r in [2usize, 3] {
        let sr = model.superresolve_volume(&v, r).unwrap();
        sr_ok &= sr.slice_count() == (5 - 1) * r + 1;
        for k in 0..5 {
            let orig: Vec<u32> = v.slice_data(k).iter().map(|x| x.to_bits()).collect();
            let kept: Vec<u32> = sr.slice_data(k * r).iter().map(|x| x.to_bits()).collect();
            sr_ok &= orig == kept;
        }
    }

    verdict(
        6,
        "latent-mix-contracts",
        endpoint_ok && self_ok && sr_ok,
        &format!("endpoints {endpoint_ok}, self-mix {self_ok}, superresolve {sr_ok}"),
    );
}

// ---------------------------------------------------------------------------
// criteria 7 and 8 share one trained model
// ---------------------------------------------------------------------------

struct TrainedArtifacts {
    model: Autoencoder,
    initial_val: f64,
    final_val: f64,
    train_seconds: f64,
    steps_run: usize,
}

static TRAINED: OnceLock<TrainedArtifacts> = OnceLock::new();

fn phantom_set() -> Vec<Volume> {
    phantom_dataset(&PhantomConfig {
        volumes: 200,
        slices: 9,
        rows: 64,
        cols: 64,
        through_mm: 5.0,
        inplane_mm: 1.4,
        seed: 0,
    })
}

fn trained() -> &'static TrainedArtifacts {
    TRAINED.get_or_init(|| {
        let phantoms = phantom_set();
        let train_vols = &phantoms[..160];
        let val_vols = &phantoms[160..180];
        let val_slices: Vec<Slice> = val_vols.iter().flat_map(|v| v.extract_slices()).collect();

        let cfg = TrainConfig {
            patch: 32,
            batch_size: 1,
            lr: 1e-3,
            max_steps: 5000,
            val_interval: 500,
            early_stop_patience: u64::MAX, // run all 5000 steps
            seed: 7,
            ..TrainConfig::default()
        };
        let mut model = Autoencoder::new(
            AeConfig {
                input_rows: 32,
                input_cols: 32,
                ..AeConfig::default()
            },
            7,
        )
        .unwrap();
        let initial_val = validation_mse(&model, &val_slices).unwrap();
        let t0 = Instant::now();
        let report = train(&mut model, train_vols, val_vols, &cfg, None).unwrap();
        let train_seconds = t0.elapsed().as_secs_f64();
        let final_val = validation_mse(&model, &val_slices).unwrap();
        TrainedArtifacts {
            model,
            initial_val,
            final_val,
            train_seconds,
            steps_run: report.losses.len(),
        }
    })
}

#[test]
fn criterion_07_training_convergence() {
    let art = trained();
    let ratio = art.final_val / art.initial_val;
    let pass = art.steps_run == 5000 && ratio < 0.20 && art.train_seconds < 900.0;
    verdict(
        7,
        "training-convergence",
        pass,
        &format!(
            "val mse {:.5} -> {:.5} ({:.1}% of initial, < 20%), {} steps in {:.0}s (< 900s)",
            art.initial_val,
            art.final_val,
            100.0 * ratio,
            art.steps_run,
            art.train_seconds
        ),
    );
}

#[test]
fn criterion_08_ordering_reproduction() {
    let art = trained();
    let phantoms = phantom_set();
    let test_vols = &phantoms[180..200];

    let t0 = Instant::now();
    let records = evaluate_volumes(&art.model, test_vols, &ALL_METHODS, 1).unwrap();
    let summary = summarize(&records);

    let dir = tmp_dir("ordering");
    let csv_path = dir.join("report.csv");
    let summary_path = dir.join("report.summary.txt");
    export_report(&summary, &records, &csv_path, aniso_sr::eval::ReportFormat::Csv).unwrap();
    export_report(
        &summary,
        &records,
        &summary_path,
        aniso_sr::eval::ReportFormat::StructuredText,
    )
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let mean_ssim = |m: Method| {
        summary
            .methods
            .iter()
            .find(|s| s.method == m)
            .map(|s| s.ssim.mean)
            .unwrap_or(f64::NAN)
    };
    let ae = mean_ssim(Method::Ae);
    let linear = mean_ssim(Method::Linear);
    let p = summary
        .significance
        .iter()
        .find(|s| s.baseline == Method::Linear && s.metric == MetricKind::Ssim)
        .and_then(|s| s.p_value);

    let files_ok = csv_path.exists() && summary_path.exists();
    let rows = std::fs::read_to_string(&csv_path).unwrap().lines().count();
    let expected_rows = 1 + 20 * 4 * 4; // header + 20 volumes x 4 held-out x 4 methods
    let pass = ae >= linear - 0.01 && files_ok && rows == expected_rows && secs < 300.0;
    verdict(
        8,
        "ordering-reproduction",
        pass,
        &format!(
            "mean ssim ae {ae:.4} vs linear {linear:.4} (tolerance -0.01), wilcoxon ae>linear p={p:?}, {rows} csv rows, {secs:.0}s (< 300s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 9: round-trips
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_round_trips() {
    let mut rng = SplitMix64::new(56);
    let dir = tmp_dir("roundtrip");
    let mut pass = true;
    let mut details: Vec<String> = Vec::new();

    // Volume file I/O, both formats, randomized shapes and values.
    for trial in 0..5 {
        let slices = 1 + rng.next_index(5);
        let rows = 2 + rng.next_index(30);
        let cols = 2 + rng.next_index(30);
        let data: Vec<f32> = (0..slices * rows * cols)
            .map(|_| (rng.next_f64() * 2.0 - 0.5) as f32)
            .collect();
        let spacing = (
            (rng.next_f64() * 9.0 + 1.0) as f32,
            (rng.next_f64() + 0.5) as f32,
            (rng.next_f64() + 0.5) as f32,
        );
        let v = Volume::new(data, (slices, rows, cols), spacing, format!("rt-{trial}")).unwrap();
        for (format, ext) in [(VolumeFormat::Nifti1, "nii"), (VolumeFormat::RawSidecar, "bin")] {
            let path = dir.join(format!("t{trial}.{ext}"));
            write_volume(&v, &path, format).unwrap();
            let back = load_volume(&path, format).unwrap();
            let same_data = back
                .data()
                .iter()
                .zip(v.data().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            pass &= same_data && back.dims() == v.dims() && back.spacing() == v.spacing();
        }
    }
    details.push("volume io ok".into());

    // Weight serialization.
    let model = Autoencoder::new(
        AeConfig {
            input_rows: 32,
            input_cols: 32,
            ..AeConfig::default()
        },
        57,
    )
    .unwrap();
    let wpath = dir.join("model.weights");
    save_weights(model.weights(), &wpath).unwrap();
    let back = load_weights(&wpath).unwrap();
    pass &= back.fingerprint() == model.weights().fingerprint();
    for (a, b) in model.weights().entries().iter().zip(back.entries().iter()) {
        pass &= a.name == b.name && a.kind == b.kind;
        pass &= a
            .tensor
            .data()
            .iter()
            .zip(b.tensor.data().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    pass &= Autoencoder::from_weights(back).is_ok();
    details.push("weights ok".into());

    // CSV export/parse on randomized records.
    let methods = [Method::Ae, Method::Linear, Method::Bspline3, Method::Lanczos3];
    let records: Vec<aniso_sr::eval::EvalRecord> = (0..40)
        .map(|i| aniso_sr::eval::EvalRecord {
            volume_id: format!("v{:02}", i / 4),
            slice_index: 1 + 2 * (i % 3),
            method: methods[i % 4],
            psnr_db: if i % 7 == 0 {
                f64::INFINITY
            } else {
                rng.next_f64() * 40.0
            },
            ssim: rng.next_f64(),
            vif: rng.next_f64() * 1.2,
        })
        .collect();
    let csv = render_records_csv(&records);
    let parsed = parse_records_csv(&csv).unwrap();
    let mut sorted = records.clone();
    sorted.sort_by(|a, b| {
        (&a.volume_id, a.slice_index, a.method).cmp(&(&b.volume_id, b.slice_index, b.method))
    });
    pass &= parsed == sorted;
    details.push("csv ok".into());

    verdict(9, "round-trips", pass, &details.join(", "));
}

// ---------------------------------------------------------------------------
// criterion 10: determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let dir = tmp_dir("determinism");
    let phantoms = phantom_dataset(&PhantomConfig {
        volumes: 6,
        ..PhantomConfig::default()
    });
    let train_vols = &phantoms[..4];
    let eval_vols = &phantoms[4..];

    let run = |tag: &str| {
        let cfg = TrainConfig {
            patch: 32,
            batch_size: 1,
            lr: 1e-3,
            max_steps: 40,
            val_interval: 20,
            early_stop_patience: u64::MAX,
            seed: 99,
            ..TrainConfig::default()
        };
        let mut model = Autoencoder::new(
            AeConfig {
                input_rows: 32,
                input_cols: 32,
                ..AeConfig::default()
            },
            99,
        )
        .unwrap();
        let log = dir.join(format!("train-{tag}.csv"));
        train(&mut model, train_vols, eval_vols, &cfg, Some(&log)).unwrap();
        let weights = dir.join(format!("model-{tag}.weights"));
        model.save(&weights).unwrap();

        let records = evaluate_volumes(&model, eval_vols, &ALL_METHODS, 1).unwrap();
        let summary = summarize(&records);
        let csv = dir.join(format!("eval-{tag}.csv"));
        export_report(&summary, &records, &csv, aniso_sr::eval::ReportFormat::Csv).unwrap();
        (
            std::fs::read(&log).unwrap(),
            std::fs::read(&weights).unwrap(),
            std::fs::read(&csv).unwrap(),
        )
    };

    let (log_a, weights_a, csv_a) = run("a");
    let (log_b, weights_b, csv_b) = run("b");
    let pass = log_a == log_b && weights_a == weights_b && csv_a == csv_b;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "logs identical: {}, weights identical: {}, eval csv identical: {}",
            log_a == log_b,
            weights_a == weights_b,
            csv_a == csv_b
        ),
    );
}
