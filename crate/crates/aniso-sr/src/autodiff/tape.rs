//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs; node creation order is therefore a topological order, and
//! `backward` sweeps the list in reverse with a fixed accumulation order,
//! so gradients are bit-reproducible across runs. Reductions (means,
//! variances) accumulate in f64 and round once to f32.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        padding: usize,
    },
    LeakyRelu {
        x: NodeId,
        slope: f32,
    },
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
    },
    AvgPool2 {
        x: NodeId,
    },
    Upsample2 {
        x: NodeId,
    },
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
    Sum {
        x: NodeId,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Computation graph for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    /// Insert a tensor as a graph leaf. Its `requires_grad` flag decides
    /// whether `backward` will populate its gradient.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad();
        self.push(t, needs, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Move a node's tensor out of the tape (its grad travels with it).
    pub fn take_value(&mut self, id: NodeId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].value.grad()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// 2D cross-correlation, stride 1, square zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, padding: usize) -> Result<NodeId> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, cw, kh, kw) = self.value(w).dims4()?;
        if cw != c {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {cw}"
            )));
        }
        if self.value(b).shape() != [o] {
            return Err(Error::Shape(format!(
                "conv2d bias shape {:?} does not match {o} output channels",
                self.value(b).shape()
            )));
        }
        let (hp, wp) = (h + 2 * padding, wd + 2 * padding);
        if hp + 1 < kh || wp + 1 < kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        let (oh, ow) = (hp - kh + 1, wp - kw + 1);

        let xp = pad_nchw(self.value(x).data(), n, c, h, wd, padding);
        let mut out = vec![0.0f32; n * o * oh * ow];
        conv2d_forward(
            &xp,
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
            ConvDims {
                n,
                c,
                hp,
                wp,
                o,
                kh,
                kw,
                oh,
                ow,
            },
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![n, o, oh, ow], out)?,
            needs,
            Op::Conv2d { x, w, b, padding },
        ))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let data: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, data).expect("shape preserved"),
            needs,
            Op::LeakyRelu { x, slope },
        )
    }

    /// Batch normalization over (N, H, W) per channel.
    ///
    /// Train mode normalizes with batch statistics and updates the running
    /// buffers in place with momentum; eval mode normalizes with the given
    /// running statistics. Both modes are differentiable w.r.t. x, gamma
    /// and beta.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut [f32],
        running_var: &mut [f32],
        mode: BnMode,
        momentum: f64,
        eps: f64,
    ) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for (name, len) in [
            ("gamma", self.value(gamma).numel()),
            ("beta", self.value(beta).numel()),
            ("running_mean", running_mean.len()),
            ("running_var", running_var.len()),
        ] {
            if len != c {
                return Err(Error::Shape(format!(
                    "batch_norm2d {name} has {len} entries, expected {c} channels"
                )));
            }
        }
        let count = n * h * w;
        let plane = h * w;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut out = vec![0.0f32; xd.len()];

        let node = match mode {
            BnMode::Train => {
                if count == 1 {
                    return Err(Error::Degenerate(
                        "batch variance undefined over a single value per channel".into(),
                    ));
                }
                let mut means = vec![0.0f64; c];
                let mut inv_stds = vec![0.0f64; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for &v in &xd[base..base + plane] {
                            sum += v as f64;
                        }
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for &v in &xd[base..base + plane] {
                            let d = v as f64 - mean;
                            sq += d * d;
                        }
                    }
                    let var = sq / count as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    means[ch] = mean;
                    inv_stds[ch] = inv_std;
                    let (g, b) = (gd[ch] as f64, bd[ch] as f64);
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for (y, &v) in out[base..base + plane].iter_mut().zip(&xd[base..base + plane])
                        {
                            *y = (g * ((v as f64 - mean) * inv_std) + b) as f32;
                        }
                    }
                    let unbiased = var * count as f64 / (count as f64 - 1.0);
                    running_mean[ch] =
                        ((1.0 - momentum) * running_mean[ch] as f64 + momentum * mean) as f32;
                    running_var[ch] =
                        ((1.0 - momentum) * running_var[ch] as f64 + momentum * unbiased) as f32;
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    beta,
                    mean: means,
                    inv_std: inv_stds,
                }
            }
            BnMode::Eval => {
                let mut inv_stds = vec![0.0f64; c];
                let mut means = vec![0.0f64; c];
                for ch in 0..c {
                    let inv_std = 1.0 / (running_var[ch] as f64 + eps).sqrt();
                    inv_stds[ch] = inv_std;
                    means[ch] = running_mean[ch] as f64;
                    let scale = gd[ch] as f64 * inv_std;
                    let b = bd[ch] as f64;
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for (y, &v) in out[base..base + plane].iter_mut().zip(&xd[base..base + plane])
                        {
                            *y = (scale * (v as f64 - means[ch]) + b) as f32;
                        }
                    }
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    beta,
                    inv_std: inv_stds,
                    mean: means,
                }
            }
        };
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Tensor::new(vec![n, c, h, w], out)?, needs, node))
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "avg_pool2d needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let r0 = &src[(2 * oy) * w..(2 * oy + 1) * w];
                let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
                for ox in 0..ow {
                    dst[oy * ow + ox] =
                        0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            needs,
            Op::AvgPool2 { x },
        ))
    }

    /// 2x2 nearest-neighbor upsampling.
    pub fn upsample_nearest2d(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (oh, ow) = (2 * h, 2 * w);
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for x_ in 0..w {
                    let v = src[y * w + x_];
                    let base = (2 * y) * ow + 2 * x_;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + ow] = v;
                    dst[base + ow + 1] = v;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            needs,
            Op::Upsample2 { x },
        ))
    }

    /// Mean squared error over all elements; scalar output.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(Error::Shape(format!(
                "mse_loss shapes differ: {:?} vs {:?}",
                self.value(pred).shape(),
                self.value(target).shape()
            )));
        }
        let mut acc = 0.0f64;
        for (&p, &t) in self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data().iter())
        {
            let d = p as f64 - t as f64;
            acc += d * d;
        }
        let mse = (acc / self.value(pred).numel() as f64) as f32;
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(mse), needs, Op::MseLoss { pred, target }))
    }

    /// Sum of all elements; scalar output.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let acc: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(acc as f32), needs, Op::Sum { x })
    }

    /// Reverse sweep from a scalar loss; populates gradients on every node
    /// that (transitively) requires them, leaves included.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.needs(loss) {
            return Ok(()); // nothing in the graph requires gradients
        }
        self.nodes[loss.0].value.set_grad(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].value.grad().is_none() {
                continue;
            }
            // Each op computes local parent gradients into fresh buffers,
            // then accumulates them; repeated parents therefore add up. A
            // parent's first contribution moves the buffer in directly.
            let grads: Vec<(NodeId, Vec<f32>)> = self.local_grads(idx);
            for (pid, g) in grads {
                let value = &mut self.nodes[pid.0].value;
                if value.grad().is_none() {
                    value.set_grad(g);
                } else {
                    let buf = value.grad_buf();
                    for (dst, src) in buf.iter_mut().zip(g.iter()) {
                        *dst += *src;
                    }
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize) -> Vec<(NodeId, Vec<f32>)> {
        let node = &self.nodes[idx];
        let gy = node.value.grad().expect("checked by caller");
        let mut out: Vec<(NodeId, Vec<f32>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, padding } => {
                let (n, c, h, wd) = self.value(*x).dims4().expect("validated at forward");
                let (o, _, kh, kw) = self.value(*w).dims4().expect("validated at forward");
                let (_, _, oh, ow) = node.value.dims4().expect("conv output is 4D");
                let dims = ConvDims {
                    n,
                    c,
                    hp: h + 2 * padding,
                    wp: wd + 2 * padding,
                    o,
                    kh,
                    kw,
                    oh,
                    ow,
                };
                if self.needs(*x) {
                    let dx = conv2d_backward_input(gy, self.value(*w).data(), dims, h, wd, *padding);
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let xp = pad_nchw(self.value(*x).data(), n, c, h, wd, *padding);
                    let dw = conv2d_backward_weight(gy, &xp, dims);
                    out.push((*w, dw));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0f32; o];
                    for (co, dbv) in db.iter_mut().enumerate() {
                        let mut acc = 0.0f64;
                        for ni in 0..n {
                            let base = (ni * o + co) * oh * ow;
                            for &g in &gy[base..base + oh * ow] {
                                acc += g as f64;
                            }
                        }
                        *dbv = acc as f32;
                    }
                    out.push((*b, db));
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.needs(*x) {
                    let xd = self.value(*x).data();
                    let dx: Vec<f32> = xd
                        .iter()
                        .zip(gy.iter())
                        .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                        .collect();
                    out.push((*x, dx));
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("validated at forward");
                let plane = h * w;
                let count = (n * plane) as f64;
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let need_x = self.needs(*x);
                let need_g = self.needs(*gamma);
                let need_b = self.needs(*beta);
                let mut dx = if need_x { vec![0.0f32; xd.len()] } else { Vec::new() };
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ch in 0..c {
                    let (m, is) = (mean[ch], inv_std[ch]);
                    let mut s0 = 0.0f64; // sum gy
                    let mut s1 = 0.0f64; // sum gy * xhat
                    for ni in 0..n {
                        let base = (ni * c + ch) * plane;
                        for (&g, &v) in gy[base..base + plane].iter().zip(&xd[base..base + plane]) {
                            let xhat = (v as f64 - m) * is;
                            s0 += g as f64;
                            s1 += g as f64 * xhat;
                        }
                    }
                    dgamma[ch] = s1 as f32;
                    dbeta[ch] = s0 as f32;
                    if need_x {
                        let coeff = gd[ch] as f64 * is / count;
                        for ni in 0..n {
                            let base = (ni * c + ch) * plane;
                            for k in base..base + plane {
                                let xhat = (xd[k] as f64 - m) * is;
                                dx[k] =
                                    (coeff * (count * gy[k] as f64 - s0 - xhat * s1)) as f32;
                            }
                        }
                    }
                }
                if need_x {
                    out.push((*x, dx));
                }
                if need_g {
                    out.push((*gamma, dgamma));
                }
                if need_b {
                    out.push((*beta, dbeta));
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                mean,
            } => {
                let (n, c, h, w) = self.value(*x).dims4().expect("validated at forward");
                let plane = h * w;
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                if self.needs(*x) {
                    let mut dx = vec![0.0f32; xd.len()];
                    for ch in 0..c {
                        let scale = gd[ch] as f64 * inv_std[ch];
                        for ni in 0..n {
                            let base = (ni * c + ch) * plane;
                            for k in base..base + plane {
                                dx[k] = (gy[k] as f64 * scale) as f32;
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    for ch in 0..c {
                        let mut s0 = 0.0f64;
                        let mut s1 = 0.0f64;
                        for ni in 0..n {
                            let base = (ni * c + ch) * plane;
                            for (&g, &v) in
                                gy[base..base + plane].iter().zip(&xd[base..base + plane])
                            {
                                let xhat = (v as f64 - mean[ch]) * inv_std[ch];
                                s0 += g as f64;
                                s1 += g as f64 * xhat;
                            }
                        }
                        dgamma[ch] = s1 as f32;
                        dbeta[ch] = s0 as f32;
                    }
                    if self.needs(*gamma) {
                        out.push((*gamma, dgamma));
                    }
                    if self.needs(*beta) {
                        out.push((*beta, dbeta));
                    }
                }
            }
            Op::AvgPool2 { x } => {
                if self.needs(*x) {
                    let (n, c, h, w) = self.value(*x).dims4().expect("validated at forward");
                    let (oh, ow) = (h / 2, w / 2);
                    let mut dx = vec![0.0f32; n * c * h * w];
                    for p in 0..n * c {
                        let g = &gy[p * oh * ow..(p + 1) * oh * ow];
                        let d = &mut dx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let share = 0.25 * g[oy * ow + ox];
                                let base = (2 * oy) * w + 2 * ox;
                                d[base] += share;
                                d[base + 1] += share;
                                d[base + w] += share;
                                d[base + w + 1] += share;
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::Upsample2 { x } => {
                if self.needs(*x) {
                    let (n, c, h, w) = self.value(*x).dims4().expect("validated at forward");
                    let ow = 2 * w;
                    let mut dx = vec![0.0f32; n * c * h * w];
                    for p in 0..n * c {
                        let g = &gy[p * 4 * h * w..(p + 1) * 4 * h * w];
                        let d = &mut dx[p * h * w..(p + 1) * h * w];
                        for y in 0..h {
                            for x_ in 0..w {
                                let base = (2 * y) * ow + 2 * x_;
                                d[y * w + x_] +=
                                    g[base] + g[base + 1] + g[base + ow] + g[base + ow + 1];
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::MseLoss { pred, target } => {
                let g = gy[0];
                let pd = self.value(*pred).data();
                let td = self.value(*target).data();
                let scale = 2.0 / pd.len() as f32 * g;
                if self.needs(*pred) {
                    let dp: Vec<f32> = pd
                        .iter()
                        .zip(td.iter())
                        .map(|(&p, &t)| scale * (p - t))
                        .collect();
                    out.push((*pred, dp));
                }
                if self.needs(*target) {
                    let dt: Vec<f32> = pd
                        .iter()
                        .zip(td.iter())
                        .map(|(&p, &t)| -scale * (p - t))
                        .collect();
                    out.push((*target, dt));
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let g = gy[0];
                    out.push((*x, vec![g; self.value(*x).numel()]));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    n: usize,
    c: usize,
    hp: usize, // padded input height
    wp: usize, // padded input width
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn pad_nchw(x: &[f32], n: usize, c: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    if pad == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; n * c * hp * wp];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * hp * wp..(p + 1) * hp * wp];
        for y in 0..h {
            dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w]
                .copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

/// out[n,o,oy,ox] = b[o] + sum_{ci,ky,kx} w[o,ci,ky,kx] * xp[n,ci,oy+ky,ox+kx]
///
/// 3x3 kernels take a fused path that applies all three kx taps per pass.
/// Either way the per-element accumulation order is fixed by the loop
/// structure, so results are bit-reproducible.
fn conv2d_forward(xp: &[f32], w: &[f32], b: &[f32], out: &mut [f32], d: ConvDims) {
    if small_plane(&d) {
        return conv2d_forward_small(xp, w, b, out, d);
    }
    let xplane = d.hp * d.wp;
    let oplane = d.oh * d.ow;
    for ni in 0..d.n {
        for co in 0..d.o {
            let dst = &mut out[(ni * d.o + co) * oplane..(ni * d.o + co + 1) * oplane];
            dst.fill(b[co]);
            for ci in 0..d.c {
                let src = &xp[(ni * d.c + ci) * xplane..(ni * d.c + ci + 1) * xplane];
                let wbase = (co * d.c + ci) * d.kh * d.kw;
                if d.kh == 3 && d.kw == 3 {
                    for ky in 0..3 {
                        let w0 = w[wbase + ky * 3];
                        let w1 = w[wbase + ky * 3 + 1];
                        let w2 = w[wbase + ky * 3 + 2];
                        for oy in 0..d.oh {
                            let xrow = &src[(oy + ky) * d.wp..(oy + ky) * d.wp + d.ow + 2];
                            let orow = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                            axpy3(orow, xrow, w0, w1, w2);
                        }
                    }
                } else {
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let wv = w[wbase + ky * d.kw + kx];
                            for oy in 0..d.oh {
                                let xrow =
                                    &src[(oy + ky) * d.wp + kx..(oy + ky) * d.wp + kx + d.ow];
                                let orow = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                                axpy(orow, xrow, wv);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Input gradient as a full correlation: pad gy by (k-1), correlate with the
/// kernel flipped in both spatial axes, then strip the forward padding.
/// This keeps the same contiguous gather pattern as the forward pass.
fn conv2d_backward_input(
    gy: &[f32],
    w: &[f32],
    d: ConvDims,
    h: usize,
    wd: usize,
    pad: usize,
) -> Vec<f32> {
    if small_plane(&d) {
        return conv2d_backward_input_small(gy, w, d, h, wd, pad);
    }
    let xplane = d.hp * d.wp;
    let oplane = d.oh * d.ow;
    // gy padded by k-1 on each side.
    let gp_h = d.oh + 2 * (d.kh - 1);
    let gp_w = d.ow + 2 * (d.kw - 1);
    let gplane = gp_h * gp_w;
    let mut gyp = vec![0.0f32; d.n * d.o * gplane];
    for p in 0..d.n * d.o {
        let src = &gy[p * oplane..(p + 1) * oplane];
        let dst = &mut gyp[p * gplane..(p + 1) * gplane];
        for y in 0..d.oh {
            dst[(y + d.kh - 1) * gp_w + (d.kw - 1)..(y + d.kh - 1) * gp_w + (d.kw - 1) + d.ow]
                .copy_from_slice(&src[y * d.ow..(y + 1) * d.ow]);
        }
    }

    let mut dxp = vec![0.0f32; d.n * d.c * xplane];
    for ni in 0..d.n {
        for ci in 0..d.c {
            let dst = &mut dxp[(ni * d.c + ci) * xplane..(ni * d.c + ci + 1) * xplane];
            for co in 0..d.o {
                let g = &gyp[(ni * d.o + co) * gplane..(ni * d.o + co + 1) * gplane];
                let wbase = (co * d.c + ci) * d.kh * d.kw;
                if d.kh == 3 && d.kw == 3 {
                    for ky in 0..3 {
                        // flipped kernel row: w[2-ky][2-kx]
                        let w0 = w[wbase + (2 - ky) * 3 + 2];
                        let w1 = w[wbase + (2 - ky) * 3 + 1];
                        let w2 = w[wbase + (2 - ky) * 3];
                        for iy in 0..d.hp {
                            let grow = &g[(iy + ky) * gp_w..(iy + ky) * gp_w + d.wp + 2];
                            let drow = &mut dst[iy * d.wp..(iy + 1) * d.wp];
                            axpy3(drow, grow, w0, w1, w2);
                        }
                    }
                } else {
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let wv = w[wbase + (d.kh - 1 - ky) * d.kw + (d.kw - 1 - kx)];
                            for iy in 0..d.hp {
                                let grow = &g[(iy + ky) * gp_w + kx..(iy + ky) * gp_w + kx + d.wp];
                                let drow = &mut dst[iy * d.wp..(iy + 1) * d.wp];
                                axpy(drow, grow, wv);
                            }
                        }
                    }
                }
            }
        }
    }
    if pad == 0 {
        return dxp;
    }
    let mut dx = vec![0.0f32; d.n * d.c * h * wd];
    for p in 0..d.n * d.c {
        let src = &dxp[p * xplane..(p + 1) * xplane];
        let dst = &mut dx[p * h * wd..(p + 1) * h * wd];
        for y in 0..h {
            dst[y * wd..(y + 1) * wd]
                .copy_from_slice(&src[(y + pad) * d.wp + pad..(y + pad) * d.wp + pad + wd]);
        }
    }
    dx
}

/// dw[o,ci,ky,kx] = sum_{n,oy,ox} gy[n,o,oy,ox] * xp[n,ci,oy+ky,ox+kx]
///
/// Built as one dot product per (output channel, tap) over a transposed
/// patch matrix col[k][s], so the inner loops are contiguous regardless of
/// plane size; per-element accumulation order is fixed (sample-major, then
/// the dot's lane order).
fn conv2d_backward_weight(gy: &[f32], xp: &[f32], d: ConvDims) -> Vec<f32> {
    let taps = d.kh * d.kw;
    let k = d.c * taps;
    let s = d.oh * d.ow;
    let xplane = d.hp * d.wp;
    let mut col = vec![0.0f32; k * s];
    let mut acc = vec![0.0f64; d.o * k];
    for ni in 0..d.n {
        // col[t][si] = xp[ci, oy+ky, ox+kx] with t = (ci, ky, kx); each
        // (ci, ky, kx, oy) is one contiguous row copy.
        for ci in 0..d.c {
            let plane = &xp[(ni * d.c + ci) * xplane..(ni * d.c + ci + 1) * xplane];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let t = ci * taps + ky * d.kw + kx;
                    let dst = &mut col[t * s..(t + 1) * s];
                    for oy in 0..d.oh {
                        dst[oy * d.ow..(oy + 1) * d.ow].copy_from_slice(
                            &plane[(oy + ky) * d.wp + kx..(oy + ky) * d.wp + kx + d.ow],
                        );
                    }
                }
            }
        }
        for co in 0..d.o {
            let g = &gy[(ni * d.o + co) * s..(ni * d.o + co + 1) * s];
            let out = &mut acc[co * k..(co + 1) * k];
            for (t, a) in out.iter_mut().enumerate() {
                *a += dot(g, &col[t * s..(t + 1) * s]) as f64;
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Small output planes (the deep 256-channel layers run at 2x2..8x8)
/// would spend their time in per-channel-pair loop overhead; they instead
/// take an im2col route whose inner loops run contiguously over channels.
fn small_plane(d: &ConvDims) -> bool {
    d.kh == 3 && d.kw == 3 && d.oh * d.ow <= 64
}

/// colt[si*k + ci*9 + ky*3 + kx] = x[ci, oy+ky, ox+kx] for si = oy*ow + ox;
/// column layout matches the [o, c, 3, 3] weight rows.
fn fill_patches(x: &[f32], colt: &mut [f32], d: &ConvDims) {
    let xplane = d.hp * d.wp;
    let k = d.c * 9;
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let si = oy * d.ow + ox;
            let dst = &mut colt[si * k..(si + 1) * k];
            for ci in 0..d.c {
                let plane = &x[ci * xplane..(ci + 1) * xplane];
                for ky in 0..3 {
                    let off = (oy + ky) * d.wp + ox;
                    dst[ci * 9 + ky * 3..ci * 9 + ky * 3 + 3]
                        .copy_from_slice(&plane[off..off + 3]);
                }
            }
        }
    }
}

fn conv2d_forward_small(xp: &[f32], w: &[f32], b: &[f32], out: &mut [f32], d: ConvDims) {
    let k = d.c * 9;
    let s = d.oh * d.ow;
    let xplane = d.hp * d.wp;
    let mut colt = vec![0.0f32; s * k];
    for ni in 0..d.n {
        fill_patches(&xp[ni * d.c * xplane..(ni + 1) * d.c * xplane], &mut colt, &d);
        for co in 0..d.o {
            let wrow = &w[co * k..(co + 1) * k];
            let dst = &mut out[(ni * d.o + co) * s..(ni * d.o + co + 1) * s];
            for (si, o) in dst.iter_mut().enumerate() {
                *o = b[co] + dot(wrow, &colt[si * k..(si + 1) * k]);
            }
        }
    }
}

fn conv2d_backward_input_small(
    gy: &[f32],
    w: &[f32],
    d: ConvDims,
    h: usize,
    wd: usize,
    pad: usize,
) -> Vec<f32> {
    let k = d.c * 9;
    let s = d.oh * d.ow;
    let mut dcol = vec![0.0f32; s * k];
    let mut dx = vec![0.0f32; d.n * d.c * h * wd];
    for ni in 0..d.n {
        dcol.fill(0.0);
        for co in 0..d.o {
            let wrow = &w[co * k..(co + 1) * k];
            let g = &gy[(ni * d.o + co) * s..(ni * d.o + co + 1) * s];
            for (si, &gv) in g.iter().enumerate() {
                axpy(&mut dcol[si * k..(si + 1) * k], wrow, gv);
            }
        }
        // col2im: scatter patch gradients back, skipping padded positions.
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let drow = &dcol[(oy * d.ow + ox) * k..(oy * d.ow + ox + 1) * k];
                for ci in 0..d.c {
                    for ky in 0..3 {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = ox + kx;
                            if ix < pad || ix - pad >= wd {
                                continue;
                            }
                            dx[((ni * d.c + ci) * h + (iy - pad)) * wd + (ix - pad)] +=
                                drow[ci * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// dst[i] += w0*src[i] + w1*src[i+1] + w2*src[i+2]; src holds dst.len()+2
/// valid elements.
#[inline]
fn axpy3(dst: &mut [f32], src: &[f32], w0: f32, w1: f32, w2: f32) {
    let n = dst.len();
    let s0 = &src[..n];
    let s1 = &src[1..n + 1];
    let s2 = &src[2..n + 2];
    for (((d, &a), &b), &c) in dst.iter_mut().zip(s0).zip(s1).zip(s2) {
        *d = w2.mul_add(c, w1.mul_add(b, w0.mul_add(a, *d)));
    }
}

/// dst += a * src over equal-length rows.
#[inline]
fn axpy(dst: &mut [f32], src: &[f32], a: f32) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d = s.mul_add(a, *d);
    }
}

/// Dot product with four interleaved lane-accumulator blocks: breaks the
/// FMA latency chain while keeping a fixed, reproducible summation order.
#[inline]
#[allow(clippy::needless_range_loop)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 16;
    const BLOCK: usize = 4 * LANES;
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let mut acc0 = [0.0f32; LANES];
    let mut acc1 = [0.0f32; LANES];
    let mut acc2 = [0.0f32; LANES];
    let mut acc3 = [0.0f32; LANES];
    let blocks = n / BLOCK;
    for i in 0..blocks {
        let ao = &a[i * BLOCK..(i + 1) * BLOCK];
        let bo = &b[i * BLOCK..(i + 1) * BLOCK];
        for l in 0..LANES {
            acc0[l] = ao[l].mul_add(bo[l], acc0[l]);
            acc1[l] = ao[LANES + l].mul_add(bo[LANES + l], acc1[l]);
            acc2[l] = ao[2 * LANES + l].mul_add(bo[2 * LANES + l], acc2[l]);
            acc3[l] = ao[3 * LANES + l].mul_add(bo[3 * LANES + l], acc3[l]);
        }
    }
    let mut s = 0.0f32;
    for l in 0..LANES {
        s += acc0[l];
    }
    for l in 0..LANES {
        s += acc1[l];
    }
    for l in 0..LANES {
        s += acc2[l];
    }
    for l in 0..LANES {
        s += acc3[l];
    }
    for i in blocks * BLOCK..n {
        s = a[i].mul_add(b[i], s);
    }
    s
}
