use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean cross-entropy over the batch for logits `[B, C]`, with its gradient
/// `(softmax - onehot) / B`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>)> {
    let (b, c) = match *logits.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: logits.shape().to_vec(),
                right: alloc::vec![labels.len(), 0],
            })
        }
    };
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: alloc::vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::ClassOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Vec::with_capacity(b * c);
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| libm::exp(v.as_f64() - max)).collect();
        let z: f64 = exps.iter().sum();
        loss += libm::log(z) + max - row[y].as_f64();
        for (i, e) in exps.iter().enumerate() {
            let p = e / z;
            let target = if i == y { 1.0 } else { 0.0 };
            grad.push(F::from_f64((p - target) * inv_b));
        }
    }
    Ok((loss * inv_b, Tensor::from_vec(logits.shape(), grad)?))
}

/// Local loss of one scope: per-step cross-entropy summed over steps.
pub fn local_loss<F: Scalar>(logits_per_step: &[Tensor<F>], labels: &[usize]) -> Result<f64> {
    logits_per_step
        .iter()
        .map(|l| cross_entropy(l, labels).map(|(v, _)| v))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let l = Tensor::<f64>::zeros(&[3, 5]);
        let (v, _) = cross_entropy(&l, &[0, 1, 4]).unwrap();
        assert!((v - libm::log(5.0)).abs() < 1e-15);
        let total = local_loss(&[l.clone(), l], &[0, 1, 4]).unwrap();
        assert!((total - 2.0 * libm::log(5.0)).abs() < 1e-14);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let l = Tensor::from_f64(&[1, 3], &[margin, 0.0, 0.0]).unwrap();
            let (v, _) = cross_entropy::<f64>(&l, &[0]).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = [0.3, -1.2, 2.0, 0.1, 0.5, -0.4, 1.1, 0.0];
        let l = Tensor::from_f64(&[2, 4], &data).unwrap();
        let labels = [2, 0];
        let (_, g) = cross_entropy::<f64>(&l, &labels).unwrap();
        let h = 1e-6;
        for i in 0..data.len() {
            let mut p = data;
            p[i] += h;
            let mut m = data;
            m[i] -= h;
            let fp = cross_entropy::<f64>(&Tensor::from_f64(&[2, 4], &p).unwrap(), &labels).unwrap().0;
            let fm = cross_entropy::<f64>(&Tensor::from_f64(&[2, 4], &m).unwrap(), &labels).unwrap().0;
            assert!(((fp - fm) / (2.0 * h) - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(
            cross_entropy(&l, &[3]),
            Err(Error::ClassOutOfRange { label: 3, classes: 3 })
        ));
    }
}
