//! Temporary: split AE quality into reconstruction vs mid-slice synthesis.

use aniso_sr::autoencoder::{AeConfig, Autoencoder};
use aniso_sr::eval::{drop_alternate_slices, evaluate_volume, summarize, Method, ALL_METHODS};
use aniso_sr::metrics::ssim;
use aniso_sr::synth::{phantom_dataset, PhantomConfig};
use aniso_sr::trainer::{train, validation_mse, TrainConfig};
use aniso_sr::volume::Slice;

#[test]
#[ignore]
fn recon_vs_synthesis() {
    let phantoms = phantom_dataset(&PhantomConfig::default());
    let train_vols = &phantoms[..160];
    let val_vols = &phantoms[160..170];
    let test_vols = &phantoms[180..];
    let val_slices: Vec<Slice> = val_vols.iter().flat_map(|v| v.extract_slices()).collect();

    let cfg = TrainConfig {
        patch: 64,
        batch_size: 2,
        lr: 1e-3,
        max_steps: 2500,
        val_interval: 500,
        early_stop_patience: u64::MAX,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut model = Autoencoder::new(
        AeConfig {
            base_channels: 16,
            input_rows: 64,
            input_cols: 64,
            ..AeConfig::default()
        },
        11,
    )
    .unwrap();
    let initial = validation_mse(&model, &val_slices).unwrap();
    let report = train(&mut model, train_vols, val_vols, &cfg, None).unwrap();
    println!(
        "initial {initial:.5}, validations {:?}",
        report
            .validations
            .iter()
            .map(|(s, v)| format!("{s}:{v:.4}"))
            .collect::<Vec<_>>()
    );

    // Reconstruction SSIM on held-out slices (identity task).
    let mut recon_ssim = 0.0;
    let mut n = 0;
    for v in test_vols.iter().take(5) {
        for s in v.extract_slices() {
            let r = model.reconstruct(&s).unwrap();
            recon_ssim += ssim(&s, &r).unwrap();
            n += 1;
        }
    }
    println!("reconstruction ssim: {:.4} over {n} slices", recon_ssim / n as f64);

    // Mid-slice synthesis SSIM (the r=2 protocol itself).
    let mut synth_ssim = 0.0;
    let mut m = 0;
    for v in test_vols.iter().take(5) {
        let (low, held) = drop_alternate_slices(v).unwrap();
        for (&idx, truth) in &held {
            let j = (idx - 1) / 2;
            let s = model
                .synthesize_between(&low.slice_at(j), &low.slice_at(j + 1), &[0.5])
                .unwrap();
            synth_ssim += ssim(truth, &s[0]).unwrap();
            m += 1;
        }
    }
    println!("synthesis ssim: {:.4} over {m} slices", synth_ssim / m as f64);

    let mut records = Vec::new();
    for v in test_vols.iter().take(5) {
        records.extend(evaluate_volume(&model, v, &ALL_METHODS).unwrap());
    }
    let summary = summarize(&records);
    for mm in &summary.methods {
        if mm.method == Method::Ae || mm.method == Method::Linear {
            println!("  {}: ssim {:.4} psnr {:.2}", mm.method, mm.ssim.mean, mm.psnr.mean);
        }
    }
}
