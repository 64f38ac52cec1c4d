//! Adam optimizer with bias correction. Moments are kept in f64 so update
//! arithmetic is reproducible and insensitive to accumulation noise.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams {
            lr,
            ..AdamParams::default()
        }
    }
}

/// Optimizer state: one first/second moment pair per parameter tensor,
/// congruent to it, plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamParams,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(hyper: AdamParams, param_sizes: &[usize]) -> AdamState {
        AdamState {
            hyper,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> AdamParams {
        self.hyper
    }

    /// One Adam update over all parameters. `params` and `grads` must match
    /// the slots this state was built for, in order.
    pub fn step<'a, P>(&mut self, params: P, grads: &[&[f32]]) -> Result<()>
    where
        P: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(Error::Contract(format!(
                    "param {i} has {} elements, state slot holds {}",
                    p.numel(),
                    self.m[i].len()
                )));
            }
            if g.len() != p.numel() {
                return Err(Error::Contract(format!(
                    "gradient {i} has {} elements for a parameter of {}",
                    g.len(),
                    p.numel()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let AdamParams {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        // Fold bias correction into per-step constants:
        // lr * (m/bc1) / (sqrt(v/bc2) + eps) = a*m / (sqrt(v)*s + eps)
        // with a = lr/bc1 and s = 1/sqrt(bc2).
        let a = lr / (1.0 - beta1.powi(t));
        let s = 1.0 / (1.0 - beta2.powi(t)).sqrt();
        let c1 = 1.0 - beta1;
        let c2 = 1.0 - beta2;

        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let w = p.data_mut();
            let n = w.len();
            let (g, m, v) = (&g[..n], &mut m[..n], &mut v[..n]);
            for i in 0..n {
                let gf = g[i] as f64;
                let mi = beta1 * m[i] + c1 * gf;
                let vi = beta2 * v[i] + c2 * gf * gf;
                m[i] = mi;
                v[i] = vi;
                w[i] = (w[i] as f64 - a * mi / (vi.sqrt() * s + eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = AdamState::new(AdamParams::with_lr(0.1), &[3]);
        adam.step([&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut adam = AdamState::new(AdamParams::with_lr(0.0), &[1]);
        adam.step([&mut p], &[&[4.0]]).unwrap();
        let m_after_first = adam.m[0][0];
        adam.step([&mut p], &[&[0.0]]).unwrap();
        assert!((adam.m[0][0] - 0.9 * m_after_first).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let lr = 0.05;
        let mut adam = AdamState::new(AdamParams::with_lr(lr), &[1]);
        adam.step([&mut p], &[&[3.0]]).unwrap();
        // Bias-corrected first step is -lr * g/|g| up to eps.
        assert!((p.data()[0] as f64 + lr).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2, df/dw = 2(w - 3). Oracle: the same scalar Adam
        // recurrence unrolled independently below.
        let mut w = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut adam = AdamState::new(AdamParams::with_lr(0.1), &[1]);
        let (mut om, mut ov, mut ow) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (w.data()[0] - 3.0);
            adam.step([&mut w], &[&[g]]).unwrap();

            let og = 2.0 * (ow - 3.0);
            om = 0.9 * om + 0.1 * og;
            ov = 0.999 * ov + 0.001 * og * og;
            let mh = om / (1.0 - 0.9f64.powi(t));
            let vh = ov / (1.0 - 0.999f64.powi(t));
            ow -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w.data()[0] - 3.0).abs() < 0.5, "got {}", w.data()[0]);
        assert!((w.data()[0] as f64 - ow).abs() < 1e-3, "impl vs oracle");
    }

    #[test]
    fn mismatched_slots_are_contract_errors() {
        let mut p = Tensor::new(vec![2], vec![0.0; 2]).unwrap();
        let mut adam = AdamState::new(AdamParams::default(), &[2]);
        assert!(matches!(adam.step([&mut p], &[]), Err(Error::Contract(_))));
        let mut adam = AdamState::new(AdamParams::default(), &[3]);
        assert!(matches!(
            adam.step([&mut p], &[&[0.0, 0.0, 0.0][..]]),
            Err(Error::Contract(_))
        ));
    }
}
