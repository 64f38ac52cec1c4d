//! Patch-based training loop: random 2D patches with rotation/intensity
//! augmentation, MSE reconstruction loss, Adam updates, periodic validation
//! with best-checkpoint tracking and early stopping.
//!
//! Everything is driven by one seeded counter-based generator, so a fixed
//! seed reproduces the exact patch sequence, loss series and final weights.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::{AdamParams, Tape, Tensor};
use crate::autoencoder::Autoencoder;
use crate::baselines::mirror;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::volume::{Slice, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rot90: bool,
    pub intensity_scale: (f32, f32),
    pub intensity_shift: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rot90: true,
            intensity_scale: (0.9, 1.1),
            intensity_shift: (-0.1, 0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub patch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: u64,
    pub val_interval: u64,
    /// Consecutive non-improving validations tolerated before stopping.
    pub early_stop_patience: u64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch: 128,
            batch_size: 16,
            lr: 1e-5,
            max_steps: 10_000,
            val_interval: 500,
            early_stop_patience: 10,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.patch.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "patch size {} must be a positive multiple of 16",
                self.patch
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 || self.lr.is_nan() || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.val_interval == 0 {
            return Err(Error::Config("val_interval must be >= 1".into()));
        }
        let (slo, shi) = self.augment.intensity_scale;
        let (blo, bhi) = self.augment.intensity_shift;
        if !(slo <= shi && blo <= bhi) {
            return Err(Error::Config(format!(
                "augmentation ranges must be ordered: scale ({slo}, {shi}), shift ({blo}, {bhi})"
            )));
        }
        Ok(())
    }

    /// Apply `key: value` lines from a config file on top of this config.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("config line {line:?} is not `key: value`")))?;
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("config {what} value {value:?} unparsable"));
            match key.trim() {
                "patch" => self.patch = value.parse().map_err(|_| bad("patch"))?,
                "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
                "max_steps" => self.max_steps = value.parse().map_err(|_| bad("max_steps"))?,
                "val_interval" => {
                    self.val_interval = value.parse().map_err(|_| bad("val_interval"))?
                }
                "early_stop_patience" => {
                    self.early_stop_patience =
                        value.parse().map_err(|_| bad("early_stop_patience"))?
                }
                "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
                "rot90" => self.augment.rot90 = value.parse().map_err(|_| bad("rot90"))?,
                "intensity_scale" => {
                    self.augment.intensity_scale = parse_pair(value).ok_or_else(|| bad("intensity_scale"))?
                }
                "intensity_shift" => {
                    self.augment.intensity_shift = parse_pair(value).ok_or_else(|| bad("intensity_shift"))?
                }
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }
}

fn parse_pair(value: &str) -> Option<(f32, f32)> {
    let mut it = value.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Training loss at step i+1.
    pub losses: Vec<f32>,
    /// (step, mean validation MSE) at each validation point.
    pub validations: Vec<(u64, f64)>,
    pub best_step: Option<u64>,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

/// Draw one patch uniformly over all (volume, slice, valid offset) triples.
/// Slices smaller than the patch are reflect-padded up to patch size.
pub fn sample_patch(volumes: &[Volume], patch: usize, rng: &mut SplitMix64) -> Result<Slice> {
    if volumes.is_empty() {
        return Err(Error::Config("cannot sample patches from an empty training set".into()));
    }
    let counts: Vec<u64> = volumes
        .iter()
        .map(|v| {
            let (slices, rows, cols) = v.dims();
            let offs_r = rows.saturating_sub(patch) + 1;
            let offs_c = cols.saturating_sub(patch) + 1;
            (slices * offs_r * offs_c) as u64
        })
        .collect();
    let total: u64 = counts.iter().sum();
    let mut u = rng.next_u64() % total;
    let mut vol_idx = 0;
    for (i, &c) in counts.iter().enumerate() {
        if u < c {
            vol_idx = i;
            break;
        }
        u -= c;
    }
    let v = &volumes[vol_idx];
    let (_, rows, cols) = v.dims();
    let offs_r = rows.saturating_sub(patch) + 1;
    let offs_c = cols.saturating_sub(patch) + 1;
    let per_slice = (offs_r * offs_c) as u64;
    let slice_idx = (u / per_slice) as usize;
    let rem = (u % per_slice) as usize;
    let off_r = rem / offs_c;
    let off_c = rem % offs_c;

    let src = v.slice_data(slice_idx);
    let mut data = Vec::with_capacity(patch * patch);
    if rows >= patch && cols >= patch {
        for i in 0..patch {
            let start = (off_r + i) * cols + off_c;
            data.extend_from_slice(&src[start..start + patch]);
        }
    } else {
        // Reflect-pad past the edges.
        for i in 0..patch {
            let si = mirror((off_r + i) as isize, rows);
            for j in 0..patch {
                let sj = mirror((off_c + j) as isize, cols);
                data.push(src[si * cols + sj]);
            }
        }
    }
    let spacing = v.spacing();
    Slice::new(data, patch, patch, (spacing.row_mm, spacing.col_mm))
}

/// Random 90-degree rotation (when enabled) followed by a random affine
/// intensity change clamped back to [0, 1].
pub fn augment(s: &Slice, rng: &mut SplitMix64, cfg: &AugmentConfig) -> Result<Slice> {
    let mut out = s.clone();
    if cfg.rot90 {
        if s.rows() != s.cols() {
            return Err(Error::Shape(format!(
                "rotation augmentation needs square patches, got {}x{}",
                s.rows(),
                s.cols()
            )));
        }
        let quarter_turns = rng.next_index(4);
        for _ in 0..quarter_turns {
            out = rotate90(&out);
        }
    }
    let (slo, shi) = cfg.intensity_scale;
    let (blo, bhi) = cfg.intensity_shift;
    let a = rng.uniform(slo as f64, shi as f64) as f32;
    let b = rng.uniform(blo as f64, bhi as f64) as f32;
    if a != 1.0 || b != 0.0 {
        for v in out.data_mut() {
            *v = (a * *v + b).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

fn rotate90(s: &Slice) -> Slice {
    let n = s.rows();
    let mut data = vec![0.0f32; n * n];
    for i in 0..n {
        for j in 0..n {
            // counter-clockwise quarter turn
            data[i * n + j] = s.at(j, n - 1 - i);
        }
    }
    Slice::new(data, n, n, s.spacing()).expect("square stays square")
}

/// Run the training loop. The model is left at the best-validation
/// checkpoint when a validation set is given, otherwise at the final step.
/// `log_path`, when set, receives an append-only `step,loss,val_loss` CSV.
pub fn train(
    model: &mut Autoencoder,
    volumes: &[Volume],
    val_volumes: &[Volume],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let div = model.config().downsample_factor();
    let val_slices: Vec<Slice> = val_volumes.iter().flat_map(|v| v.extract_slices()).collect();
    for s in &val_slices {
        if s.rows() % div != 0 || s.cols() % div != 0 {
            return Err(Error::Config(format!(
                "validation slice {}x{} not divisible by {div}; crop validation volumes first",
                s.rows(),
                s.cols()
            )));
        }
    }

    let start = Instant::now();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut adam = model.adam_state(AdamParams::with_lr(cfg.lr));
    let mut log = match log_path {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = std::io::BufWriter::new(f);
            writeln!(w, "step,loss,val_loss").map_err(|e| Error::io(p, e))?;
            Some((w, p))
        }
        None => None,
    };

    let mut report = TrainReport::default();
    let mut best_weights = None;
    let mut stale: u64 = 0;
    let p = cfg.patch;

    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size * p * p);
        for _ in 0..cfg.batch_size {
            let raw = sample_patch(volumes, p, &mut rng)?;
            let patch = augment(&raw, &mut rng, &cfg.augment)?;
            batch.extend_from_slice(patch.data());
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![cfg.batch_size, 1, p, p], batch)?);
        let (recon, bindings) = model.forward_train(&mut tape, x)?;
        let loss_id = tape.mse_loss(recon, x)?;
        let loss = tape.value(loss_id).data()[0];
        if !loss.is_finite() {
            if let Some((w, path)) = log.as_mut() {
                w.flush().map_err(|e| Error::io(*path, e))?;
            }
            return Err(Error::Numerical {
                step,
                detail: format!("training loss became {loss}"),
            });
        }
        tape.backward(loss_id)?;

        let mut grads: Vec<&[f32]> = Vec::with_capacity(bindings.len());
        for (entry_idx, node) in &bindings {
            let g = tape.grad(*node).ok_or_else(|| {
                Error::Contract(format!(
                    "missing gradient for parameter {:?}",
                    model.weights().entry(*entry_idx).name
                ))
            })?;
            grads.push(g);
        }
        adam.step(model.weights_mut().params_mut(), &grads)?;
        report.losses.push(loss);

        let mut val_cell = String::new();
        if !val_slices.is_empty() && step % cfg.val_interval == 0 {
            let val = validation_mse(model, &val_slices)?;
            report.validations.push((step, val));
            val_cell = format!("{val}");
            let improved = report.best_val.is_none_or(|b| val < b);
            if improved {
                report.best_val = Some(val);
                report.best_step = Some(step);
                best_weights = Some(model.clone_weights());
                stale = 0;
            } else {
                stale += 1;
                if stale > cfg.early_stop_patience {
                    report.stopped_early = true;
                }
            }
        }
        if let Some((w, path)) = log.as_mut() {
            writeln!(w, "{step},{loss},{val_cell}").map_err(|e| Error::io(*path, e))?;
        }
        if report.stopped_early {
            break;
        }
    }

    if let Some(weights) = best_weights {
        model.set_weights(weights)?;
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean reconstruction MSE over validation slices, eval mode, unclamped.
pub fn validation_mse(model: &Autoencoder, slices: &[Slice]) -> Result<f64> {
    if slices.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut acc = 0.0f64;
    for s in slices {
        let recon = model.reconstruct_unclamped(s)?;
        let mut sq = 0.0f64;
        for (&r, &o) in recon.data().iter().zip(s.data().iter()) {
            let d = r as f64 - o as f64;
            sq += d * d;
        }
        acc += sq / s.data().len() as f64;
    }
    Ok(acc / slices.len() as f64)
}
