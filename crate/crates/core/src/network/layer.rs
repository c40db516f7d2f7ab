//! Parameterised layers and their single-step forward and backward kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{
    avgpool2d, avgpool2d_backward, conv2d, conv2d_grad_input, conv2d_grad_kernel,
};
use crate::neuron::{self, logit, sigmoid, NeuronCache, NeuronCarry, NeuronConfig, NeuronState};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::spec::{LayerKind, LayerSpec};

fn batched(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

/// Per-step live state of one layer: one neuron state per spiking stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F> {
    pub neurons: Vec<NeuronState<F>>,
}

/// What one forward step leaves behind for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<F> {
    /// Afferent activity `s[l-1][t]`.
    pub input: Option<Tensor<F>>,
    /// Residual blocks: spikes of the first stage.
    pub mid: Option<Tensor<F>>,
    pub neurons: Vec<NeuronCache<F>>,
    /// Classifier logits.
    pub logits: Option<Tensor<F>>,
}

impl<F: Scalar> LayerCache<F> {
    pub fn bytes(&self) -> u64 {
        self.input.as_ref().map_or(0, Tensor::bytes)
            + self.mid.as_ref().map_or(0, Tensor::bytes)
            + self.neurons.iter().map(NeuronCache::bytes).sum::<u64>()
            + self.logits.as_ref().map_or(0, Tensor::bytes)
    }
}

/// Temporal gradient carried backwards between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCarry<F> {
    pub neurons: Vec<NeuronCarry<F>>,
}

impl<F> LayerCarry<F> {
    pub fn empty(stages: usize) -> Self {
        Self {
            neurons: (0..stages).map(|_| NeuronCarry::default()).collect(),
        }
    }
}

/// A layer and its parameters.
///
/// Parameter order: spiking conv / linear `[w, (plif)]`; residual
/// `[w1, w2, (w_shortcut), (plif1, plif2)]`; classifier `[w, b]`;
/// projections `[w]`; pooling has none. PLIF decays are stored as the
/// pre-sigmoid scalar `w` with `lambda = sigmoid(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<F>>,
}

impl<F: Scalar> Layer<F> {
    /// Random initialisation: normal weights with std `gain / sqrt(fan_in)`,
    /// zero classifier bias.
    pub fn init(spec: &LayerSpec, neuron: &NeuronConfig, rng: &mut Rng, gain: f64) -> Self {
        let cin = spec.in_shape[0];
        let fan = |n: usize| gain / libm::sqrt(n as f64);
        let mut params = Vec::new();
        match spec.kind {
            LayerKind::EncodeConv {
                channels, kernel, ..
            }
            | LayerKind::Conv {
                channels, kernel, ..
            } => {
                let n = cin * kernel * kernel;
                params.push(rng.normal_tensor(&[channels, cin, kernel, kernel], fan(n)));
            }
            LayerKind::Linear { features } => {
                let n = spec.in_elems();
                params.push(rng.normal_tensor(&[features, n], fan(n)));
            }
            LayerKind::ResidualBlock { channels, .. } => {
                params.push(rng.normal_tensor(&[channels, cin, 3, 3], fan(cin * 9)));
                params.push(rng.normal_tensor(&[channels, channels, 3, 3], fan(channels * 9)));
                if Self::has_shortcut(spec) {
                    params.push(rng.normal_tensor(&[channels, cin, 1, 1], fan(cin)));
                }
            }
            LayerKind::ProjConv { channels, .. } => {
                params.push(rng.normal_tensor(&[channels, cin, 1, 1], 1.0 / libm::sqrt(cin as f64)));
            }
            LayerKind::ProjLinear { features } => {
                let n = spec.in_elems();
                params.push(rng.normal_tensor(&[features, n], 1.0 / libm::sqrt(n as f64)));
            }
            LayerKind::Classifier { classes } => {
                let n = spec.in_elems();
                params.push(rng.normal_tensor(&[classes, n], 1.0 / libm::sqrt(n as f64)));
                params.push(Tensor::zeros(&[classes]));
            }
            LayerKind::AvgPool { .. } => {}
        }
        if neuron.is_plif() {
            for _ in 0..spec.kind.neuron_stages() {
                params.push(Tensor::scalar(F::from_f64(logit(neuron.lambda))).reshape(&[1]).unwrap());
            }
        }
        Self {
            spec: spec.clone(),
            params,
        }
    }

    fn has_shortcut(spec: &LayerSpec) -> bool {
        match spec.kind {
            LayerKind::ResidualBlock { channels, stride } => {
                stride != 1 || spec.in_shape[0] != channels
            }
            _ => false,
        }
    }

    fn plif_offset(&self) -> usize {
        self.params.len() - self.spec.kind.neuron_stages()
    }

    /// Decay factor of spiking stage `stage`.
    pub fn decay(&self, stage: usize, neuron: &NeuronConfig) -> F {
        if neuron.is_plif() {
            let w = self.params[self.plif_offset() + stage].data()[0].as_f64();
            F::from_f64(sigmoid(w))
        } else {
            F::from_f64(neuron.lambda)
        }
    }

    pub fn init_state(&self, batch: usize, neuron: &NeuronConfig) -> LayerState<F> {
        let shape = batched(batch, &self.spec.out_shape);
        LayerState {
            neurons: (0..self.spec.kind.neuron_stages())
                .map(|_| NeuronState::zeros(&shape, neuron))
                .collect(),
        }
    }

    pub fn zero_grads(&self) -> Vec<Tensor<F>> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<usize> {
        let b = *x.shape().first().unwrap_or(&0);
        if b == 0 || x.len() != b * self.spec.in_elems() {
            return Err(shape_err(
                self.spec.kind.name(),
                x.shape(),
                &batched(b, &self.spec.in_shape),
            ));
        }
        Ok(b)
    }

    /// Input viewed with this layer's declared per-sample shape.
    fn shaped_input(&self, x: &Tensor<F>, b: usize) -> Tensor<F> {
        let want = batched(b, &self.spec.in_shape);
        if x.shape() == want.as_slice() {
            x.clone()
        } else {
            x.clone().reshape(&want).unwrap()
        }
    }

    /// One forward step. Returns the output activity (spikes, pooled values,
    /// projections or logits) and, when `keep_cache` is set, the values
    /// needed to backpropagate through this step.
    pub fn forward_step(
        &self,
        x: &Tensor<F>,
        state: &mut LayerState<F>,
        neuron: &NeuronConfig,
        keep_cache: bool,
    ) -> Result<(Tensor<F>, Option<LayerCache<F>>)> {
        let b = self.check_input(x)?;
        let out_shape = batched(b, &self.spec.out_shape);
        let mut cache = LayerCache {
            input: None,
            mid: None,
            neurons: Vec::new(),
            logits: None,
        };
        let out = match self.spec.kind {
            LayerKind::EncodeConv {
                stride, padding, ..
            }
            | LayerKind::Conv {
                stride, padding, ..
            } => {
                let xin = self.shaped_input(x, b);
                let current = conv2d(&xin, &self.params[0], stride, padding)?;
                let nc = neuron::step_in_place(
                    &mut state.neurons[0],
                    &current,
                    self.decay(0, neuron),
                    neuron,
                )?;
                cache.input = Some(xin);
                cache.neurons.push(nc);
                state.neurons[0].s.clone()
            }
            LayerKind::Linear { features } => {
                let current = Tensor::from_vec(
                    &out_shape,
                    dense_forward(x.data(), b, self.spec.in_elems(), &self.params[0], features),
                )?;
                let nc = neuron::step_in_place(
                    &mut state.neurons[0],
                    &current,
                    self.decay(0, neuron),
                    neuron,
                )?;
                cache.input = Some(x.clone());
                cache.neurons.push(nc);
                state.neurons[0].s.clone()
            }
            LayerKind::ResidualBlock { stride, .. } => {
                let xin = self.shaped_input(x, b);
                let c1 = conv2d(&xin, &self.params[0], stride, 1)?;
                let n1 = neuron::step_in_place(
                    &mut state.neurons[0],
                    &c1,
                    self.decay(0, neuron),
                    neuron,
                )?;
                let s1 = state.neurons[0].s.clone();
                let mut c2 = conv2d(&s1, &self.params[1], 1, 1)?;
                if Self::has_shortcut(&self.spec) {
                    c2.add_assign(&conv2d(&xin, &self.params[2], stride, 0)?)?;
                } else {
                    c2.add_assign(&xin)?;
                }
                let n2 = neuron::step_in_place(
                    &mut state.neurons[1],
                    &c2,
                    self.decay(1, neuron),
                    neuron,
                )?;
                cache.input = Some(xin);
                cache.mid = Some(s1);
                cache.neurons.push(n1);
                cache.neurons.push(n2);
                state.neurons[1].s.clone()
            }
            LayerKind::AvgPool { kernel, stride } => {
                avgpool2d(&self.shaped_input(x, b), kernel, stride)?
            }
            LayerKind::ProjConv { stride, .. } => {
                let xin = self.shaped_input(x, b);
                let y = conv2d(&xin, &self.params[0], stride, 0)?;
                cache.input = Some(xin);
                y
            }
            LayerKind::ProjLinear { features } => {
                let y = Tensor::from_vec(
                    &out_shape,
                    dense_forward(x.data(), b, self.spec.in_elems(), &self.params[0], features),
                )?;
                cache.input = Some(x.clone());
                y
            }
            LayerKind::Classifier { classes } => {
                let mut y =
                    dense_forward(x.data(), b, self.spec.in_elems(), &self.params[0], classes);
                let bias = self.params[1].data();
                for row in y.chunks_mut(classes) {
                    for (v, &bb) in row.iter_mut().zip(bias) {
                        *v += bb;
                    }
                }
                let y = Tensor::from_vec(&out_shape, y)?;
                cache.input = Some(x.clone());
                cache.logits = Some(y.clone());
                y
            }
        };
        Ok((out, keep_cache.then_some(cache)))
    }

    /// One backward step through the cached forward step.
    ///
    /// `g_out` is the gradient with respect to this step's output. Parameter
    /// gradients are accumulated into `grads`; `carry` receives the temporal
    /// gradient for the previous step (ignored by truncated regimes). Returns
    /// the gradient with respect to the step's input when `want_input` is set.
    pub fn backward_step(
        &self,
        cache: &LayerCache<F>,
        g_out: Tensor<F>,
        carry: &mut LayerCarry<F>,
        grads: &mut [Tensor<F>],
        neuron: &NeuronConfig,
        want_input: bool,
    ) -> Result<Option<Tensor<F>>> {
        let b = *g_out.shape().first().unwrap_or(&0);
        let out_shape = batched(b, &self.spec.out_shape);
        if g_out.len() != b * self.spec.out_elems() || b == 0 {
            return Err(shape_err("backward_step", g_out.shape(), &out_shape));
        }
        let g_out = if g_out.shape() == out_shape.as_slice() {
            g_out
        } else {
            g_out.reshape(&out_shape)?
        };
        let input = || {
            cache.input.as_ref().ok_or(Error::MissingCache {
                layer: 0,
                step: 0,
            })
        };
        let plif = neuron.is_plif();
        let po = self.plif_offset();
        match self.spec.kind {
            LayerKind::EncodeConv {
                stride, padding, ..
            }
            | LayerKind::Conv {
                stride, padding, ..
            } => {
                let x = input()?;
                let ng = neuron::step_backward(
                    &cache.neurons[0],
                    &g_out,
                    &mut carry.neurons[0],
                    self.decay(0, neuron),
                    neuron,
                )?;
                grads[0].add_assign(&conv2d_grad_kernel(
                    x,
                    &ng.delta,
                    self.params[0].shape(),
                    stride,
                    padding,
                )?)?;
                if plif {
                    grads[po].data_mut()[0] += ng.g_decay;
                }
                if want_input {
                    return Ok(Some(conv2d_grad_input(
                        &ng.delta,
                        &self.params[0],
                        x.shape(),
                        stride,
                        padding,
                    )?));
                }
                Ok(None)
            }
            LayerKind::Linear { features } => {
                let x = input()?;
                let ng = neuron::step_backward(
                    &cache.neurons[0],
                    &g_out,
                    &mut carry.neurons[0],
                    self.decay(0, neuron),
                    neuron,
                )?;
                let n_in = self.spec.in_elems();
                dense_grad_weight(ng.delta.data(), x.data(), b, n_in, features, &mut grads[0]);
                if plif {
                    grads[po].data_mut()[0] += ng.g_decay;
                }
                if want_input {
                    let gx = dense_grad_input(ng.delta.data(), b, n_in, &self.params[0], features);
                    return Ok(Some(Tensor::from_vec(x.shape(), gx)?));
                }
                Ok(None)
            }
            LayerKind::ResidualBlock { stride, .. } => {
                let x = input()?;
                let s1 = cache.mid.as_ref().ok_or(Error::MissingCache {
                    layer: 0,
                    step: 0,
                })?;
                let (c1, c2) = carry.neurons.split_at_mut(1);
                let n2 = neuron::step_backward(
                    &cache.neurons[1],
                    &g_out,
                    &mut c2[0],
                    self.decay(1, neuron),
                    neuron,
                )?;
                grads[1].add_assign(&conv2d_grad_kernel(s1, &n2.delta, self.params[1].shape(), 1, 1)?)?;
                let g_s1 = conv2d_grad_input(&n2.delta, &self.params[1], s1.shape(), 1, 1)?;
                let shortcut = Self::has_shortcut(&self.spec);
                if shortcut {
                    grads[2].add_assign(&conv2d_grad_kernel(
                        x,
                        &n2.delta,
                        self.params[2].shape(),
                        stride,
                        0,
                    )?)?;
                }
                let n1 = neuron::step_backward(
                    &cache.neurons[0],
                    &g_s1,
                    &mut c1[0],
                    self.decay(0, neuron),
                    neuron,
                )?;
                grads[0].add_assign(&conv2d_grad_kernel(x, &n1.delta, self.params[0].shape(), stride, 1)?)?;
                if plif {
                    grads[po].data_mut()[0] += n1.g_decay;
                    grads[po + 1].data_mut()[0] += n2.g_decay;
                }
                if want_input {
                    let mut gx = conv2d_grad_input(&n1.delta, &self.params[0], x.shape(), stride, 1)?;
                    if shortcut {
                        gx.add_assign(&conv2d_grad_input(
                            &n2.delta,
                            &self.params[2],
                            x.shape(),
                            stride,
                            0,
                        )?)?;
                    } else {
                        gx.add_assign(&n2.delta)?;
                    }
                    return Ok(Some(gx));
                }
                Ok(None)
            }
            LayerKind::AvgPool { kernel, stride } => {
                if !want_input {
                    return Ok(None);
                }
                let in_shape = batched(b, &self.spec.in_shape);
                Ok(Some(avgpool2d_backward(&g_out, &in_shape, kernel, stride)?))
            }
            LayerKind::ProjConv { stride, .. } => {
                let x = input()?;
                grads[0].add_assign(&conv2d_grad_kernel(x, &g_out, self.params[0].shape(), stride, 0)?)?;
                if want_input {
                    return Ok(Some(conv2d_grad_input(&g_out, &self.params[0], x.shape(), stride, 0)?));
                }
                Ok(None)
            }
            LayerKind::ProjLinear { features } | LayerKind::Classifier { classes: features } => {
                let x = input()?;
                let n_in = self.spec.in_elems();
                dense_grad_weight(g_out.data(), x.data(), b, n_in, features, &mut grads[0]);
                if let LayerKind::Classifier { .. } = self.spec.kind {
                    let gb = grads[1].data_mut();
                    for row in g_out.data().chunks(features) {
                        for (a, &g) in gb.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                }
                if want_input {
                    let gx = dense_grad_input(g_out.data(), b, n_in, &self.params[0], features);
                    return Ok(Some(Tensor::from_vec(x.shape(), gx)?));
                }
                Ok(None)
            }
        }
    }
}

/// `y[B, out] = x[B, in] * W[out, in]^T`
fn dense_forward<F: Scalar>(x: &[F], b: usize, n_in: usize, w: &Tensor<F>, n_out: usize) -> Vec<F> {
    let mut y = vec![F::zero(); b * n_out];
    F::gemm(
        b,
        n_in,
        n_out,
        F::one(),
        x,
        (n_in as isize, 1),
        w.data(),
        (1, n_in as isize),
        F::zero(),
        &mut y,
        (n_out as isize, 1),
    );
    y
}

/// `gW[out, in] += g[B, out]^T * x[B, in]`
fn dense_grad_weight<F: Scalar>(
    g: &[F],
    x: &[F],
    b: usize,
    n_in: usize,
    n_out: usize,
    gw: &mut Tensor<F>,
) {
    F::gemm(
        n_out,
        b,
        n_in,
        F::one(),
        g,
        (1, n_out as isize),
        x,
        (n_in as isize, 1),
        F::one(),
        gw.data_mut(),
        (n_in as isize, 1),
    );
}

/// `gx[B, in] = g[B, out] * W[out, in]`
fn dense_grad_input<F: Scalar>(g: &[F], b: usize, n_in: usize, w: &Tensor<F>, n_out: usize) -> Vec<F> {
    let mut gx = vec![F::zero(); b * n_in];
    F::gemm(
        b,
        n_out,
        n_in,
        F::one(),
        g,
        (n_out as isize, 1),
        w.data(),
        (n_in as isize, 1),
        F::zero(),
        &mut gx,
        (n_in as isize, 1),
    );
    gx
}
