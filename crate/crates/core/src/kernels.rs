//! Convolution and pooling kernels with their backward counterparts.
//!
//! Activations are `[B, C, H, W]`; a 3-D `[C, H, W]` input is treated as a
//! batch of one and the result keeps the caller's rank. Convolution is
//! cross-correlation lowered to a single GEMM over an im2col buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a sliding window, or `None` when it would be < 1.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

fn as_batched(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(shape_err(op, shape, &[])),
    }
}

fn restore_rank(batched: bool, dims: [usize; 4]) -> Vec<usize> {
    if batched {
        dims.to_vec()
    } else {
        dims[1..].to_vec()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(
        x: &[usize],
        k: &[usize],
        stride: usize,
        pad: usize,
        op: &'static str,
    ) -> Result<(Self, bool)> {
        let [b, cin, h, w] = as_batched(x, op)?;
        let &[cout, kcin, kh, kw] = k else {
            return Err(shape_err(op, x, k));
        };
        if kcin != cin {
            return Err(shape_err(op, x, k));
        }
        let ho = out_extent(h, kh, stride, pad).ok_or(Error::NonPositiveExtent { op })?;
        let wo = out_extent(w, kw, stride, pad).ok_or(Error::NonPositiveExtent { op })?;
        Ok((
            Self {
                b,
                cin,
                h,
                w,
                cout,
                kh,
                kw,
                stride,
                pad,
                ho,
                wo,
            },
            x.len() == 4,
        ))
    }

    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    fn cols_width(&self) -> usize {
        self.b * self.plane()
    }

    /// Output positions `lo..hi` whose tap at kernel offset `k` lands inside
    /// an input extent `n`.
    fn valid(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        // o * stride + k - pad in [0, n)
        let lo = self.pad.saturating_sub(k).div_ceil(self.stride);
        let hi = if n + self.pad > k {
            ((n + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Calls `f(col_start, x_start)` for every run of taps that share a col
    /// row and an output row. Each run covers `lo..hi` output columns: col
    /// offsets step by 1, input offsets by `stride`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let width = self.cols_width();
        let plane = self.plane();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                let (ilo, ihi) = self.valid(ki, self.h, self.ho);
                for kj in 0..self.kw {
                    let (jlo, jhi) = self.valid(kj, self.w, self.wo);
                    if jlo >= jhi {
                        continue;
                    }
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for bi in 0..self.b {
                        let xbase = (bi * self.cin + c) * self.h * self.w;
                        for oi in ilo..ihi {
                            let ii = oi * self.stride + ki - self.pad;
                            let colbase = row * width + bi * plane + oi * self.wo;
                            let x0 = xbase + ii * self.w + jlo * self.stride + kj - self.pad;
                            f(colbase + jlo, x0, jhi - jlo);
                        }
                    }
                }
            }
        }
    }

    fn im2col<F: Scalar>(&self, x: &[F]) -> Vec<F> {
        let mut cols = vec![F::zero(); self.rows() * self.cols_width()];
        let s = self.stride;
        self.for_each_run(|ci, xi, n| {
            let dst = &mut cols[ci..ci + n];
            let src = &x[xi..xi + (n - 1) * s + 1];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = src[j * s];
            }
        });
        cols
    }

    fn col2im<F: Scalar>(&self, cols: &[F]) -> Vec<F> {
        let mut x = vec![F::zero(); self.b * self.cin * self.h * self.w];
        let s = self.stride;
        self.for_each_run(|ci, xi, n| {
            let src = &cols[ci..ci + n];
            let dst = &mut x[xi..xi + (n - 1) * s + 1];
            for (j, v) in src.iter().enumerate() {
                dst[j * s] += *v;
            }
        });
        x
    }

    /// `[Cout, B*P]` -> `[B, Cout, P]`
    fn unfold_out<F: Scalar>(&self, mat: &[F]) -> Vec<F> {
        let plane = self.plane();
        let width = self.cols_width();
        let mut out = vec![F::zero(); mat.len()];
        for co in 0..self.cout {
            for bi in 0..self.b {
                let src = &mat[co * width + bi * plane..co * width + (bi + 1) * plane];
                let dst = (bi * self.cout + co) * plane;
                out[dst..dst + plane].copy_from_slice(src);
            }
        }
        out
    }

    /// `[B, Cout, P]` -> `[Cout, B*P]`
    fn fold_out<F: Scalar>(&self, g: &[F]) -> Vec<F> {
        let plane = self.plane();
        let width = self.cols_width();
        let mut mat = vec![F::zero(); g.len()];
        for bi in 0..self.b {
            for co in 0..self.cout {
                let src = (bi * self.cout + co) * plane;
                let dst = co * width + bi * plane;
                mat[dst..dst + plane].copy_from_slice(&g[src..src + plane]);
            }
        }
        mat
    }
}

/// Cross-correlation of `x` with kernel `k: [Cout, Cin, kh, kw]`.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, k: &Tensor<F>, stride: usize, pad: usize) -> Result<Tensor<F>> {
    let (g, batched) = ConvGeom::new(x.shape(), k.shape(), stride, pad, "conv2d")?;
    let cols = g.im2col(x.data());
    let (m, kk, n) = (g.cout, g.rows(), g.cols_width());
    let mut mat = vec![F::zero(); m * n];
    F::gemm(
        m,
        kk,
        n,
        F::one(),
        k.data(),
        (kk as isize, 1),
        &cols,
        (n as isize, 1),
        F::zero(),
        &mut mat,
        (n as isize, 1),
    );
    Tensor::from_vec(
        &restore_rank(batched, [g.b, g.cout, g.ho, g.wo]),
        g.unfold_out(&mat),
    )
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<F: Scalar>(
    grad_out: &Tensor<F>,
    k: &Tensor<F>,
    in_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (g, batched) = ConvGeom::new(in_shape, k.shape(), stride, pad, "conv2d_grad_input")?;
    let expect = restore_rank(batched, [g.b, g.cout, g.ho, g.wo]);
    if grad_out.shape() != expect.as_slice() {
        return Err(shape_err("conv2d_grad_input", grad_out.shape(), &expect));
    }
    let gmat = g.fold_out(grad_out.data());
    let (m, kk, n) = (g.rows(), g.cout, g.cols_width());
    let mut dcols = vec![F::zero(); m * n];
    // kernel viewed as [K, Cout] via transposed strides
    F::gemm(
        m,
        kk,
        n,
        F::one(),
        k.data(),
        (1, m as isize),
        &gmat,
        (n as isize, 1),
        F::zero(),
        &mut dcols,
        (n as isize, 1),
    );
    Tensor::from_vec(in_shape, g.col2im(&dcols))
}

/// Gradient of [`conv2d`] with respect to its kernel.
pub fn conv2d_grad_kernel<F: Scalar>(
    x: &Tensor<F>,
    grad_out: &Tensor<F>,
    k_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let (g, batched) = ConvGeom::new(x.shape(), k_shape, stride, pad, "conv2d_grad_kernel")?;
    let expect = restore_rank(batched, [g.b, g.cout, g.ho, g.wo]);
    if grad_out.shape() != expect.as_slice() {
        return Err(shape_err("conv2d_grad_kernel", grad_out.shape(), &expect));
    }
    let cols = g.im2col(x.data());
    let gmat = g.fold_out(grad_out.data());
    let (m, kk, n) = (g.cout, g.cols_width(), g.rows());
    let mut dk = vec![F::zero(); m * n];
    F::gemm(
        m,
        kk,
        n,
        F::one(),
        &gmat,
        (kk as isize, 1),
        &cols,
        (1, kk as isize),
        F::zero(),
        &mut dk,
        (n as isize, 1),
    );
    Tensor::from_vec(k_shape, dk)
}

/// Average pooling with a square window and no padding.
pub fn avgpool2d<F: Scalar>(x: &Tensor<F>, k: usize, stride: usize) -> Result<Tensor<F>> {
    let [b, c, h, w] = as_batched(x.shape(), "avgpool2d")?;
    let op = "avgpool2d";
    let ho = out_extent(h, k, stride, 0).ok_or(Error::NonPositiveExtent { op })?;
    let wo = out_extent(w, k, stride, 0).ok_or(Error::NonPositiveExtent { op })?;
    let inv = F::one() / F::from_f64((k * k) as f64);
    let xd = x.data();
    let mut out = vec![F::zero(); b * c * ho * wo];
    for (xs, os) in xd.chunks_exact(h * w).zip(out.chunks_exact_mut(ho * wo)) {
        for (oi, orow) in os.chunks_exact_mut(wo).enumerate() {
            for ki in 0..k {
                let xrow = &xs[(oi * stride + ki) * w..][..w];
                for (oj, o) in orow.iter_mut().enumerate() {
                    for &v in &xrow[oj * stride..oj * stride + k] {
                        *o += v;
                    }
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
    }
    Tensor::from_vec(&restore_rank(x.shape().len() == 4, [b, c, ho, wo]), out)
}

/// Backward of [`avgpool2d`]: each output gradient is spread uniformly over
/// its window.
pub fn avgpool2d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    in_shape: &[usize],
    k: usize,
    stride: usize,
) -> Result<Tensor<F>> {
    let [b, c, h, w] = as_batched(in_shape, "avgpool2d_backward")?;
    let op = "avgpool2d_backward";
    let ho = out_extent(h, k, stride, 0).ok_or(Error::NonPositiveExtent { op })?;
    let wo = out_extent(w, k, stride, 0).ok_or(Error::NonPositiveExtent { op })?;
    let expect = restore_rank(in_shape.len() == 4, [b, c, ho, wo]);
    if grad_out.shape() != expect.as_slice() {
        return Err(shape_err(op, grad_out.shape(), &expect));
    }
    let inv = F::one() / F::from_f64((k * k) as f64);
    let gd = grad_out.data();
    let mut gx = vec![F::zero(); b * c * h * w];
    for (gs, xs) in gd.chunks_exact(ho * wo).zip(gx.chunks_exact_mut(h * w)) {
        for (oi, grow) in gs.chunks_exact(wo).enumerate() {
            for ki in 0..k {
                let xrow = &mut xs[(oi * stride + ki) * w..][..w];
                for (oj, &g) in grow.iter().enumerate() {
                    let v = g * inv;
                    for x in &mut xrow[oj * stride..oj * stride + k] {
                        *x += v;
                    }
                }
            }
        }
    }
    Tensor::from_vec(in_shape, gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Direct six-loop cross-correlation.
    fn conv_loops(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [b, cin, h, w] = as_batched(x.shape(), "t").unwrap();
        let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[b, cout, ho, wo]);
        for bi in 0..b {
            for co in 0..cout {
                for oi in 0..ho {
                    for oj in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (oi * stride + ki) as isize - pad as isize;
                                    let jj = (oj * stride + kj) as isize - pad as isize;
                                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                        continue;
                                    }
                                    acc += x.data()
                                        [((bi * cin + ci) * h + ii as usize) * w + jj as usize]
                                        * k.data()[((co * cin + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oi) * wo + oj] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        let k = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = rng.normal_tensor::<f64>(&[2, 5, 4], 1.0);
        let mut k = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        k.data_mut()[4] = 1.0; // (0,0,1,1)
        k.data_mut()[9 + 9 + 9 + 4] = 1.0; // (1,1,1,1)
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_loops() {
        let mut rng = Rng::new(2);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let x = rng.normal_tensor::<f64>(&[3, 2, 7, 6], 1.0);
            let k = rng.normal_tensor::<f64>(&[4, 2, 3, 3], 1.0);
            let d = conv2d(&x, &k, stride, pad)
                .unwrap()
                .max_abs_diff(&conv_loops(&x, &k, stride, pad))
                .unwrap();
            assert!(d <= 1e-12, "stride {stride} pad {pad}: {d}");
        }
    }

    #[test]
    fn conv_rejects_empty_output() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert_eq!(
            conv2d(&x, &k, 1, 0),
            Err(Error::NonPositiveExtent { op: "conv2d" })
        );
    }

    fn loss_grad_fd(x: &Tensor<f64>, k: &Tensor<f64>, r: &Tensor<f64>, stride: usize, pad: usize) {
        // L = <r, conv(x, k)>, so dL/dx and dL/dk are linear in r.
        let gx = conv2d_grad_input(r, k, x.shape(), stride, pad).unwrap();
        let gk = conv2d_grad_kernel(x, r, k.shape(), stride, pad).unwrap();
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>| -> f64 {
            conv2d(x, k, stride, pad)
                .unwrap()
                .mul(r)
                .unwrap()
                .sum()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, k) - loss(&xm, k)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-6);
        }
        for i in 0..k.len() {
            let mut kp = k.clone();
            kp.data_mut()[i] += h;
            let mut km = k.clone();
            km.data_mut()[i] -= h;
            let fd = (loss(x, &kp) - loss(x, &km)) / (2.0 * h);
            assert!((fd - gk.data()[i]).abs() < 1e-6);
        }
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]
        #[test]
        fn conv_and_its_adjoints_on_random_geometry(
            seed in 0u64..1000,
            b in 1usize..3, cin in 1usize..3, cout in 1usize..3,
            h in 1usize..8, w in 1usize..8,
            kh in 1usize..4, kw in 1usize..4,
            stride in 1usize..4, pad in 0usize..4,
        ) {
            let ok = h + 2 * pad >= kh && w + 2 * pad >= kw;
            proptest::prop_assume!(ok);
            let mut rng = Rng::new(seed);
            let x = rng.normal_tensor::<f64>(&[b, cin, h, w], 1.0);
            let k = rng.normal_tensor::<f64>(&[cout, cin, kh, kw], 1.0);
            let y = conv2d(&x, &k, stride, pad).unwrap();
            proptest::prop_assert!(y.max_abs_diff(&conv_loops(&x, &k, stride, pad)).unwrap() <= 1e-12);
            let r = rng.normal_tensor::<f64>(y.shape(), 1.0);
            let gx = conv2d_grad_input(&r, &k, x.shape(), stride, pad).unwrap();
            let gk = conv2d_grad_kernel(&x, &r, k.shape(), stride, pad).unwrap();
            let lhs = dot(&y, &r);
            let scale = 1.0 + lhs.abs();
            proptest::prop_assert!((dot(&x, &gx) - lhs).abs() <= 1e-12 * scale * 100.0);
            proptest::prop_assert!((dot(&k, &gk) - lhs).abs() <= 1e-12 * scale * 100.0);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        for &(stride, pad) in &[(1, 1), (2, 1), (2, 0)] {
            let x = rng.normal_tensor::<f64>(&[2, 2, 5, 5], 1.0);
            let k = rng.normal_tensor::<f64>(&[3, 2, 3, 3], 1.0);
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let r = rng.normal_tensor::<f64>(y.shape(), 1.0);
            loss_grad_fd(&x, &k, &r, stride, pad);
        }
    }

    #[test]
    fn pool_mean_and_constant() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(&[2, 3, 4, 4], 0.7);
        let y = avgpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn pool_matches_loops_and_adjoint() {
        let mut rng = Rng::new(4);
        let x = rng.normal_tensor::<f64>(&[2, 3, 6, 6], 1.0);
        let (k, s) = (3, 3);
        let y = avgpool2d(&x, k, s).unwrap();
        for bc in 0..6 {
            for oi in 0..2 {
                for oj in 0..2 {
                    let mut acc = 0.0;
                    for ki in 0..3 {
                        for kj in 0..3 {
                            acc += x.data()[bc * 36 + (oi * 3 + ki) * 6 + oj * 3 + kj];
                        }
                    }
                    let d = (acc / 9.0 - y.data()[(bc * 2 + oi) * 2 + oj]).abs();
                    assert!(d <= 1e-12);
                }
            }
        }
        // <pool(x), r> == <x, pool^T(r)>
        let r = rng.normal_tensor::<f64>(y.shape(), 1.0);
        let lhs = y.mul(&r).unwrap().sum();
        let rhs = x.mul(&avgpool2d_backward(&r, x.shape(), k, s).unwrap()).unwrap().sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
