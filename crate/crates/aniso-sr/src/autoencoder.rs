//! Convolutional autoencoder for in-plane slices, latent-code mixing, and
//! through-plane super-resolution of volumes.
//!
//! Encoder: four blocks of [conv3x3, lrelu, conv3x3, lrelu, batchnorm,
//! avgpool2], channels 32/64/128/256, then conv3x3(256) + lrelu and a
//! linear conv3x3 down to 16 latent channels. The decoder mirrors it with
//! nearest-neighbor upsampling and a linear single-channel output. All
//! convolutions are zero-padded so spatial size is preserved; input sides
//! must be divisible by 2^blocks (16).

use crate::autodiff::{
    save_weights, AdamState, BnMode, ModelWeights, NodeId, Tape, Tensor, WeightKind,
};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::volume::{Slice, Volume};

pub use crate::autodiff::load_weights;

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeConfig {
    pub base_channels: usize,
    pub blocks: usize,
    pub latent_channels: usize,
    pub leaky_slope: f32,
    pub input_rows: usize,
    pub input_cols: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            base_channels: 32,
            blocks: 4,
            latent_channels: 16,
            leaky_slope: 0.01,
            input_rows: 128,
            input_cols: 128,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.blocks == 0 || self.latent_channels == 0 {
            return Err(Error::Config(
                "base_channels, blocks and latent_channels must be >= 1".into(),
            ));
        }
        if self.blocks > 8 {
            return Err(Error::Config(format!("{} blocks is unreasonable", self.blocks)));
        }
        let div = self.downsample_factor();
        if !self.input_rows.is_multiple_of(div) || !self.input_cols.is_multiple_of(div) {
            return Err(Error::Config(format!(
                "input {}x{} not divisible by {div}",
                self.input_rows, self.input_cols
            )));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::Config(format!(
                "leaky slope {} must be finite and >= 0",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Total spatial reduction of the encoder (2 per block).
    pub fn downsample_factor(&self) -> usize {
        1 << self.blocks
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "ae-conv/base{}-blocks{}-latent{}-slope{}",
            self.base_channels, self.blocks, self.latent_channels, self.leaky_slope
        )
    }

    /// Recover the architecture from a fingerprint string; input dims are
    /// not part of the architecture and come back as defaults.
    pub fn from_fingerprint(s: &str) -> Option<AeConfig> {
        let rest = s.strip_prefix("ae-conv/")?;
        let mut cfg = AeConfig::default();
        for part in rest.split('-') {
            if let Some(v) = part.strip_prefix("base") {
                cfg.base_channels = v.parse().ok()?;
            } else if let Some(v) = part.strip_prefix("blocks") {
                cfg.blocks = v.parse().ok()?;
            } else if let Some(v) = part.strip_prefix("latent") {
                cfg.latent_channels = v.parse().ok()?;
            } else {
                let v = part.strip_prefix("slope")?;
                cfg.leaky_slope = v.parse().ok()?;
            }
        }
        Some(cfg)
    }
}

/// Where a latent code came from: an encoded slice (by through-plane index
/// when known) or a convex combination of two other codes.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentSource {
    Slice(Option<usize>),
    Mixed {
        a: Box<LatentSource>,
        b: Box<LatentSource>,
        alpha: f32,
    },
}

/// Encoder output: latent_channels x H/16 x W/16 feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub features: Tensor,
    pub source: LatentSource,
    slice_spacing: (f32, f32),
}

impl LatentCode {
    pub fn channels(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.features.shape()[1], self.features.shape()[2])
    }
}

/// Element-wise convex combination (1 - alpha) * a + alpha * b.
///
/// The endpoints return the exact input code; interior alphas use a fused
/// lerp so mixing a code with itself is also exact.
pub fn latent_mix(a: &LatentCode, b: &LatentCode, alpha: f32) -> Result<LatentCode> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if a.features.shape() != b.features.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            a.features.shape(),
            b.features.shape()
        )));
    }
    let features = if alpha == 0.0 {
        a.features.clone()
    } else if alpha == 1.0 {
        b.features.clone()
    } else {
        let data: Vec<f32> = a
            .features
            .data()
            .iter()
            .zip(b.features.data().iter())
            .map(|(&x, &y)| alpha.mul_add(y - x, x))
            .collect();
        Tensor::new(a.features.shape().to_vec(), data)?
    };
    Ok(LatentCode {
        features,
        source: LatentSource::Mixed {
            a: Box::new(a.source.clone()),
            b: Box::new(b.source.clone()),
            alpha,
        },
        slice_spacing: a.slice_spacing,
    })
}

#[derive(Debug, Clone, Copy)]
enum LayerSpec {
    Conv { w: usize, b: usize },
    Act,
    Norm { gamma: usize, beta: usize, mean: usize, var: usize },
    Pool,
    Up,
}

pub struct Autoencoder {
    cfg: AeConfig,
    weights: ModelWeights,
    encoder: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
}

impl Autoencoder {
    /// Fresh model with Kaiming-uniform conv kernels, zero biases, unit
    /// batch-norm scale.
    pub fn new(cfg: AeConfig, seed: u64) -> Result<Autoencoder> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut builder = Builder {
            weights: ModelWeights::new(cfg.fingerprint()),
            rng: &mut rng,
            slope: cfg.leaky_slope,
        };
        let encoder = builder.encoder_layers(&cfg)?;
        let decoder = builder.decoder_layers(&cfg)?;
        Ok(Autoencoder {
            cfg,
            weights: builder.weights,
            encoder,
            decoder,
        })
    }

    /// Reconstruct a model from serialized weights; the fingerprint and the
    /// full entry layout must match the architecture exactly.
    pub fn from_weights(weights: ModelWeights) -> Result<Autoencoder> {
        let cfg = AeConfig::from_fingerprint(weights.fingerprint()).ok_or_else(|| {
            Error::Incompatible(format!(
                "fingerprint {:?} does not describe this architecture",
                weights.fingerprint()
            ))
        })?;
        let mut model = Autoencoder::new(cfg, 0)?;
        model.set_weights(weights)?;
        Ok(model)
    }

    /// Replace all parameters and buffers; layout must be congruent.
    pub fn set_weights(&mut self, weights: ModelWeights) -> Result<()> {
        if weights.fingerprint() != self.weights.fingerprint() {
            return Err(Error::Incompatible(format!(
                "fingerprint {:?} does not match architecture {:?}",
                weights.fingerprint(),
                self.weights.fingerprint()
            )));
        }
        if weights.entries().len() != self.weights.entries().len() {
            return Err(Error::Incompatible(format!(
                "weight file has {} entries, architecture needs {}",
                weights.entries().len(),
                self.weights.entries().len()
            )));
        }
        for (have, want) in weights.entries().iter().zip(self.weights.entries().iter()) {
            if have.name != want.name
                || have.kind != want.kind
                || have.tensor.shape() != want.tensor.shape()
            {
                return Err(Error::Incompatible(format!(
                    "entry {:?} ({:?}) does not match expected {:?} ({:?})",
                    have.name,
                    have.tensor.shape(),
                    want.name,
                    want.tensor.shape()
                )));
            }
        }
        self.weights = weights;
        Ok(())
    }

    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    /// Mutable weight access for optimizers and tests; entry layout and
    /// shapes must stay congruent with the architecture.
    pub fn weights_mut(&mut self) -> &mut ModelWeights {
        &mut self.weights
    }

    pub fn clone_weights(&self) -> ModelWeights {
        self.weights.clone()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_weights(&self.weights, path)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .entries()
            .iter()
            .filter(|e| e.kind == WeightKind::Param)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Fresh optimizer state sized to this model's parameters.
    pub fn adam_state(&self, hyper: crate::autodiff::AdamParams) -> AdamState {
        AdamState::new(hyper, &self.weights.param_sizes())
    }

    fn check_input_dims(&self, rows: usize, cols: usize) -> Result<()> {
        let div = self.cfg.downsample_factor();
        if !rows.is_multiple_of(div) || !cols.is_multiple_of(div) {
            return Err(Error::Shape(format!(
                "slice {rows}x{cols} not divisible by {div}"
            )));
        }
        Ok(())
    }

    /// Training-mode forward over a batch tensor [N,1,H,W]; returns the
    /// reconstruction node and (weight entry, tape node) bindings for every
    /// parameter, in weight order. Batch-norm running statistics update as
    /// a side effect.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<(NodeId, Vec<(usize, NodeId)>)> {
        let mut bindings = Vec::new();
        let specs: Vec<LayerSpec> = self.encoder.iter().chain(self.decoder.iter()).copied().collect();
        let mut cur = x;
        for spec in specs {
            cur = self.apply_train(tape, spec, cur, &mut bindings)?;
        }
        Ok((cur, bindings))
    }

    fn apply_train(
        &mut self,
        tape: &mut Tape,
        spec: LayerSpec,
        x: NodeId,
        bindings: &mut Vec<(usize, NodeId)>,
    ) -> Result<NodeId> {
        match spec {
            LayerSpec::Conv { w, b } => {
                let wn = tape.leaf(self.weights.entry(w).tensor.clone());
                let bn = tape.leaf(self.weights.entry(b).tensor.clone());
                bindings.push((w, wn));
                bindings.push((b, bn));
                tape.conv2d(x, wn, bn, 1)
            }
            LayerSpec::Act => Ok(tape.leaky_relu(x, self.cfg.leaky_slope)),
            LayerSpec::Norm { gamma, beta, mean, var } => {
                let gn = tape.leaf(self.weights.entry(gamma).tensor.clone());
                let bn = tape.leaf(self.weights.entry(beta).tensor.clone());
                bindings.push((gamma, gn));
                bindings.push((beta, bn));
                let (me, ve) = self.weights.tensors_pair_mut(mean, var);
                tape.batch_norm2d(
                    x,
                    gn,
                    bn,
                    me.data_mut(),
                    ve.data_mut(),
                    BnMode::Train,
                    BN_MOMENTUM,
                    BN_EPS,
                )
            }
            LayerSpec::Pool => tape.avg_pool2d(x),
            LayerSpec::Up => tape.upsample_nearest2d(x),
        }
    }

    fn run_eval(&self, tape: &mut Tape, specs: &[LayerSpec], x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for spec in specs {
            cur = match *spec {
                LayerSpec::Conv { w, b } => {
                    let wn = tape.leaf(self.weights.entry(w).tensor.clone());
                    let bn = tape.leaf(self.weights.entry(b).tensor.clone());
                    tape.conv2d(cur, wn, bn, 1)?
                }
                LayerSpec::Act => tape.leaky_relu(cur, self.cfg.leaky_slope),
                LayerSpec::Norm { gamma, beta, mean, var } => {
                    let gn = tape.leaf(self.weights.entry(gamma).tensor.clone());
                    let bn = tape.leaf(self.weights.entry(beta).tensor.clone());
                    let mut rm = self.weights.entry(mean).tensor.data().to_vec();
                    let mut rv = self.weights.entry(var).tensor.data().to_vec();
                    tape.batch_norm2d(
                        cur,
                        gn,
                        bn,
                        &mut rm,
                        &mut rv,
                        BnMode::Eval,
                        BN_MOMENTUM,
                        BN_EPS,
                    )?
                }
                LayerSpec::Pool => tape.avg_pool2d(cur)?,
                LayerSpec::Up => tape.upsample_nearest2d(cur)?,
            };
        }
        Ok(cur)
    }

    /// Deterministic eval-mode encoding of one slice.
    pub fn encode(&self, s: &Slice) -> Result<LatentCode> {
        self.encode_indexed(s, None)
    }

    fn encode_indexed(&self, s: &Slice, index: Option<usize>) -> Result<LatentCode> {
        self.check_input_dims(s.rows(), s.cols())?;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(
            vec![1, 1, s.rows(), s.cols()],
            s.data().to_vec(),
        )?);
        let z = self.run_eval(&mut tape, &self.encoder, x)?;
        let t = tape.take_value(z);
        let div = self.cfg.downsample_factor();
        let features = t.reshaped(vec![
            self.cfg.latent_channels,
            s.rows() / div,
            s.cols() / div,
        ])?;
        Ok(LatentCode {
            features,
            source: LatentSource::Slice(index),
            slice_spacing: s.spacing(),
        })
    }

    /// Decode a latent code to a slice, clamped to [0, 1].
    pub fn decode(&self, z: &LatentCode) -> Result<Slice> {
        let raw = self.decode_unclamped(z)?;
        let mut s = raw;
        for v in s.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(s)
    }

    fn decode_unclamped(&self, z: &LatentCode) -> Result<Slice> {
        if z.channels() != self.cfg.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {} channels, model expects {}",
                z.channels(),
                self.cfg.latent_channels
            )));
        }
        let (h, w) = z.spatial();
        let mut tape = Tape::new();
        let x = tape.leaf(
            z.features
                .clone()
                .reshaped(vec![1, self.cfg.latent_channels, h, w])?,
        );
        let y = self.run_eval(&mut tape, &self.decoder, x)?;
        let out = tape.take_value(y);
        let div = self.cfg.downsample_factor();
        Slice::new(out.data().to_vec(), h * div, w * div, z.slice_spacing)
    }

    /// Eval-mode reconstruction (encode then decode), clamped like `decode`.
    pub fn reconstruct(&self, s: &Slice) -> Result<Slice> {
        let z = self.encode(s)?;
        self.decode(&z)
    }

    /// Unclamped reconstruction; used for validation losses that must match
    /// training-loss semantics.
    pub(crate) fn reconstruct_unclamped(&self, s: &Slice) -> Result<Slice> {
        let z = self.encode(s)?;
        self.decode_unclamped(&z)
    }

    /// Synthesize slices between two endpoints at the given mixing
    /// coefficients, which must be strictly increasing within [0, 1]. Each
    /// endpoint is encoded exactly once.
    pub fn synthesize_between(
        &self,
        s_a: &Slice,
        s_b: &Slice,
        alphas: &[f32],
    ) -> Result<Vec<Slice>> {
        for pair in alphas.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Domain(format!(
                    "alphas must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let (Some(first), Some(last)) = (alphas.first(), alphas.last()) {
            if !(0.0..=1.0).contains(first) || !(0.0..=1.0).contains(last) {
                return Err(Error::Domain(format!(
                    "alphas must lie in [0, 1], got range [{first}, {last}]"
                )));
            }
        }
        let za = self.encode(s_a)?;
        let zb = self.encode(s_b)?;
        alphas
            .iter()
            .map(|&alpha| self.decode(&latent_mix(&za, &zb, alpha)?))
            .collect()
    }

    /// Increase through-plane resolution by an integer factor: acquired
    /// slices are kept verbatim at output indices that are multiples of
    /// `factor`, synthesized slices fill the gaps at alpha = k/factor.
    pub fn superresolve_volume(&self, v: &Volume, factor: usize) -> Result<Volume> {
        let (n, rows, cols) = v.dims();
        if n < 2 {
            return Err(Error::Size(format!(
                "super-resolution needs at least 2 slices, got {n}"
            )));
        }
        if factor < 2 {
            return Err(Error::Domain(format!("factor must be >= 2, got {factor}")));
        }
        self.check_input_dims(rows, cols)?;

        let codes: Vec<LatentCode> = (0..n)
            .map(|k| self.encode_indexed(&v.slice_at(k), Some(k)))
            .collect::<Result<_>>()?;

        let out_n = (n - 1) * factor + 1;
        let plane = rows * cols;
        let mut data = vec![0.0f32; out_n * plane];
        for k in 0..n {
            data[k * factor * plane..(k * factor + 1) * plane].copy_from_slice(v.slice_data(k));
        }
        for k in 0..n - 1 {
            for j in 1..factor {
                let alpha = j as f32 / factor as f32;
                let mixed = latent_mix(&codes[k], &codes[k + 1], alpha)?;
                let synth = self.decode(&mixed)?;
                let pos = k * factor + j;
                data[pos * plane..(pos + 1) * plane].copy_from_slice(synth.data());
            }
        }
        let spacing = v.spacing();
        Volume::new(
            data,
            (out_n, rows, cols),
            (
                spacing.through_mm / factor as f32,
                spacing.row_mm,
                spacing.col_mm,
            ),
            v.provenance().to_string(),
        )
    }
}

struct Builder<'r> {
    weights: ModelWeights,
    rng: &'r mut SplitMix64,
    slope: f32,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize) -> Result<LayerSpec> {
        let fan_in = (in_ch * 9) as f64;
        let gain = (2.0 / (1.0 + (self.slope as f64).powi(2))).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let data: Vec<f32> = (0..out_ch * in_ch * 9)
            .map(|_| self.rng.uniform(-bound, bound) as f32)
            .collect();
        let w = self.weights.push(
            format!("{name}.w"),
            WeightKind::Param,
            Tensor::new(vec![out_ch, in_ch, 3, 3], data)?,
        )?;
        let b = self.weights.push(
            format!("{name}.b"),
            WeightKind::Param,
            Tensor::zeros(vec![out_ch]),
        )?;
        Ok(LayerSpec::Conv { w, b })
    }

    fn norm(&mut self, name: &str, ch: usize) -> Result<LayerSpec> {
        let gamma = self.weights.push(
            format!("{name}.gamma"),
            WeightKind::Param,
            Tensor::full(vec![ch], 1.0),
        )?;
        let beta = self.weights.push(
            format!("{name}.beta"),
            WeightKind::Param,
            Tensor::zeros(vec![ch]),
        )?;
        let mean = self.weights.push(
            format!("{name}.running_mean"),
            WeightKind::Buffer,
            Tensor::zeros(vec![ch]),
        )?;
        let var = self.weights.push(
            format!("{name}.running_var"),
            WeightKind::Buffer,
            Tensor::full(vec![ch], 1.0),
        )?;
        Ok(LayerSpec::Norm { gamma, beta, mean, var })
    }

    fn encoder_layers(&mut self, cfg: &AeConfig) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::new();
        let mut in_ch = 1;
        for block in 0..cfg.blocks {
            let ch = cfg.base_channels << block;
            specs.push(self.conv(&format!("enc.block{block}.conv1"), in_ch, ch)?);
            specs.push(LayerSpec::Act);
            specs.push(self.conv(&format!("enc.block{block}.conv2"), ch, ch)?);
            specs.push(LayerSpec::Act);
            specs.push(self.norm(&format!("enc.block{block}.bn"), ch)?);
            specs.push(LayerSpec::Pool);
            in_ch = ch;
        }
        specs.push(self.conv("enc.tail.conv1", in_ch, in_ch)?);
        specs.push(LayerSpec::Act);
        specs.push(self.conv("enc.tail.conv2", in_ch, cfg.latent_channels)?);
        Ok(specs)
    }

    fn decoder_layers(&mut self, cfg: &AeConfig) -> Result<Vec<LayerSpec>> {
        let top = cfg.base_channels << (cfg.blocks - 1);
        let mut specs = vec![
            self.conv("dec.head.conv1", cfg.latent_channels, top)?,
            LayerSpec::Act,
            self.conv("dec.head.conv2", top, top)?,
            LayerSpec::Act,
        ];
        let mut in_ch = top;
        for block in 0..cfg.blocks {
            let ch = cfg.base_channels << (cfg.blocks - 1 - block);
            specs.push(self.conv(&format!("dec.block{block}.conv1"), in_ch, ch)?);
            specs.push(LayerSpec::Act);
            specs.push(self.conv(&format!("dec.block{block}.conv2"), ch, ch)?);
            specs.push(LayerSpec::Act);
            specs.push(self.norm(&format!("dec.block{block}.bn"), ch)?);
            specs.push(LayerSpec::Up);
            in_ch = ch;
        }
        specs.push(self.conv("dec.tail.conv1", in_ch, cfg.latent_channels)?);
        specs.push(LayerSpec::Act);
        specs.push(self.conv("dec.tail.conv2", cfg.latent_channels, 1)?);
        Ok(specs)
    }
}
