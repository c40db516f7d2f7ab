use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// SGD with momentum, L2 weight decay and cosine annealing to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Number of updates over which the rate anneals to zero; 0 keeps `lr`.
    pub total_steps: usize,
}

impl SgdConfig {
    /// Learning rate before update `step` (0-based); reaches 0 at
    /// `step == total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr;
        }
        let p = step.min(self.total_steps) as f64 / self.total_steps as f64;
        0.5 * self.lr * (1.0 + libm::cos(core::f64::consts::PI * p))
    }
}

/// Momentum buffers of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<F> {
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> Velocity<F> {
    pub fn zeros_like(params: &[Tensor<F>]) -> Self {
        Self {
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn bytes(&self) -> u64 {
        self.v.iter().map(Tensor::bytes).sum()
    }
}

/// `v <- mu v + g + wd w; w <- w - lr(step) v`
pub fn sgd_update<F: Scalar>(
    params: &mut [Tensor<F>],
    grads: &[Tensor<F>],
    velocity: &mut Velocity<F>,
    cfg: &SgdConfig,
    step: usize,
) -> Result<()> {
    let lr = F::from_f64(cfg.lr_at(step));
    let mu = F::from_f64(cfg.momentum);
    let wd = F::from_f64(cfg.weight_decay);
    for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.v.iter_mut()) {
        if w.shape() != g.shape() || w.shape() != v.shape() {
            return Err(shape_err("sgd_update", w.shape(), g.shape()));
        }
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *wi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn plain_gradient_step() {
        let cfg = SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            total_steps: 0,
        };
        let mut w = vec![t(&[1.0, 2.0])];
        let mut v = Velocity::zeros_like(&w);
        sgd_update(&mut w, &[t(&[0.2, -0.4])], &mut v, &cfg, 0).unwrap();
        assert_eq!(w[0].data(), &[0.9, 2.2]);
    }

    #[test]
    fn cosine_endpoints() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            total_steps: 10,
        };
        assert_eq!(cfg.lr_at(0), 0.1);
        assert!(cfg.lr_at(10).abs() < 1e-18);
        assert!((cfg.lr_at(5) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn momentum_recursion_by_hand() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
            total_steps: 0,
        };
        let mut w = vec![t(&[1.0])];
        let mut v = Velocity::zeros_like(&w);
        sgd_update(&mut w, &[t(&[0.5])], &mut v, &cfg, 0).unwrap();
        // v1 = 0.5 + 0.01 * 1 = 0.51, w1 = 1 - 0.051 = 0.949
        sgd_update(&mut w, &[t(&[-0.2])], &mut v, &cfg, 1).unwrap();
        // v2 = 0.9 * 0.51 - 0.2 + 0.01 * 0.949 = 0.26849, w2 = 0.949 - 0.026849
        assert!((v.v[0].data()[0] - 0.26849).abs() < 1e-15);
        assert!((w[0].data()[0] - 0.922151).abs() < 1e-15);
    }
}
