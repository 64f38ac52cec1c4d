//! Synthetic phantom volumes: a Gaussian blob translating and dilating
//! smoothly across slices. Used by the test suite and handy for exercising
//! the CLI without clinical data.

use crate::rng::SplitMix64;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy)]
pub struct PhantomConfig {
    pub volumes: usize,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub through_mm: f32,
    pub inplane_mm: f32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            volumes: 200,
            slices: 9,
            rows: 64,
            cols: 64,
            through_mm: 5.0,
            inplane_mm: 1.4,
            seed: 0,
        }
    }
}

/// Deterministic phantom set; volume k is identical for any fixed seed.
pub fn phantom_dataset(cfg: &PhantomConfig) -> Vec<Volume> {
    let mut master = SplitMix64::new(cfg.seed);
    (0..cfg.volumes)
        .map(|idx| {
            let mut rng = master.fork(idx as u64);
            blob_volume(cfg, idx, &mut rng)
        })
        .collect()
}

fn blob_volume(cfg: &PhantomConfig, idx: usize, rng: &mut SplitMix64) -> Volume {
    let (rows, cols, slices) = (cfg.rows, cfg.cols, cfg.slices);
    // The blob glides along a circular arc, so adjacent slices see it
    // displaced by a few pixels; that is what a through-plane interpolator
    // has to cope with.
    let cx0 = rng.uniform(0.42 * cols as f64, 0.58 * cols as f64);
    let cy0 = rng.uniform(0.42 * rows as f64, 0.58 * rows as f64);
    let theta0 = rng.uniform(0.0, std::f64::consts::TAU);
    let omega = rng.uniform(0.35, 0.8);
    let radius = rng.uniform(0.11 * rows as f64, 0.16 * rows as f64);
    let sigma0 = rng.uniform(0.085 * rows as f64, 0.14 * rows as f64);
    let dsigma = rng.uniform(-0.03, 0.04);
    let amp0 = rng.uniform(0.7, 0.95);
    let damp = rng.uniform(-0.015, 0.015);

    let mut data = Vec::with_capacity(slices * rows * cols);
    for k in 0..slices {
        let kf = k as f64;
        let theta = theta0 + omega * kf;
        let cx = cx0 + radius * (theta.cos() - theta0.cos());
        let cy = cy0 + radius * (theta.sin() - theta0.sin());
        let sigma = (sigma0 * (1.0 + dsigma * kf)).max(3.0);
        let amp = (amp0 * (1.0 + damp * kf)).clamp(0.2, 1.0);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for i in 0..rows {
            for j in 0..cols {
                let dr = i as f64 - cy;
                let dc = j as f64 - cx;
                let v = amp * (-(dr * dr + dc * dc) * inv).exp();
                data.push(v as f32);
            }
        }
    }
    Volume::new(
        data,
        (slices, rows, cols),
        (cfg.through_mm, cfg.inplane_mm, cfg.inplane_mm),
        format!("phantom-{idx:03}"),
    )
    .expect("phantom dimensions are valid")
}
