//! Linear CKA and linear probing on firing-rate representations.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;
use crate::train::loss::cross_entropy;
use crate::train::optim::{sgd_update, SgdConfig, Velocity};

fn rows_cols(x: &Tensor<f64>) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, d] => Ok((n, d)),
        _ => Err(shape_err("representation", x.shape(), &[0, 0])),
    }
}

fn centred(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, d) = rows_cols(x).unwrap();
    let mut mean = alloc::vec![0.0; d];
    for row in x.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let data = x
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    Tensor::from_vec(&[n, d], data).unwrap()
}

/// `<A, B>_F`
fn frob_dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Linear CKA between `[N, D1]` and `[N, D2]` representations.
///
/// Uses the feature-space form `|Yc^T Xc|^2 / (|Xc^T Xc| |Yc^T Yc|)` or the
/// equivalent sample-space form, whichever has the smaller Gram matrices.
pub fn linear_cka(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let (n, dx) = rows_cols(x)?;
    let (ny, dy) = rows_cols(y)?;
    if n != ny {
        return Err(shape_err("linear_cka", x.shape(), y.shape()));
    }
    let xc = centred(x);
    let yc = centred(y);
    let (num, kx, ky) = if n < dx.max(dy) {
        let k = xc.matmul(&xc.transpose2d()?)?;
        let l = yc.matmul(&yc.transpose2d()?)?;
        (frob_dot(&k, &l), k.norm(), l.norm())
    } else {
        let xt = xc.transpose2d()?;
        let yt = yc.transpose2d()?;
        let cross = yt.matmul(&xc)?;
        let c = cross.norm();
        (c * c, xt.matmul(&xc)?.norm(), yt.matmul(&yc)?.norm())
    };
    if kx == 0.0 || ky == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((num / (kx * ky)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Trains a softmax-regression probe on frozen features with the same SGD
/// path as the networks and returns its accuracy on the held-out set.
pub fn linear_probe(
    train_x: &Tensor<f64>,
    train_y: &[usize],
    test_x: &Tensor<f64>,
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let (n, d) = rows_cols(train_x)?;
    let (_, dt) = rows_cols(test_x)?;
    if dt != d {
        return Err(shape_err("linear_probe", train_x.shape(), test_x.shape()));
    }
    if n != train_y.len() || test_x.shape()[0] != test_y.len() {
        return Err(Error::DimensionMismatch {
            images: n,
            labels: train_y.len(),
        });
    }
    if train_y.iter().all(|&y| y == train_y[0]) {
        return Err(Error::DegenerateLabels);
    }
    let mut params = alloc::vec![Tensor::<f64>::zeros(&[classes, d]), Tensor::zeros(&[classes])];
    let mut vel = Velocity::zeros_like(&params);
    let steps = n.div_ceil(cfg.batch_size);
    let sgd = SgdConfig {
        lr: cfg.lr,
        momentum: cfg.momentum,
        weight_decay: 0.0,
        total_steps: cfg.epochs * steps,
    };
    let shuffle = Rng::new(cfg.seed).split(streams::PROBE);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = shuffle.split(epoch as u64).permutation(n);
        for idx in order.chunks(cfg.batch_size) {
            let xb = train_x.gather_rows(idx)?;
            let yb: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
            let logits = affine(&xb, &params)?;
            let (_, g) = cross_entropy(&logits, &yb)?;
            let gw = g.transpose2d()?.matmul(&xb)?;
            let mut gb = Tensor::zeros(&[classes]);
            for row in g.data().chunks(classes) {
                for (a, v) in gb.data_mut().iter_mut().zip(row) {
                    *a += v;
                }
            }
            sgd_update(&mut params, &[gw, gb], &mut vel, &sgd, step)?;
            step += 1;
        }
    }
    let pred = affine(test_x, &params)?.argmax_rows()?;
    let correct = pred.iter().zip(test_y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test_y.len().max(1) as f64)
}

fn affine(x: &Tensor<f64>, params: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let mut logits = x.matmul(&params[0].transpose2d()?)?;
    let c = params[1].len();
    for row in logits.data_mut().chunks_mut(c) {
        for (v, b) in row.iter_mut().zip(params[1].data()) {
            *v += b;
        }
    }
    Ok(logits)
}
