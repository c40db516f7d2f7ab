//! Reference gradients from an explicitly unrolled scalar graph.
//!
//! Every weight, potential and spike of every step becomes a node of a
//! reverse-mode tape, built from direct loops (no im2col, no GEMM, no
//! hand-derived recursions). Gradients of the fast kernels are checked
//! against sweeps over this tape.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::network::{Grads, Layer, LayerKind};
use crate::neuron::{sigmoid, NeuronConfig, NeuronModel, ResetGrad};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    start: u32,
    len: u32,
}

/// Scalar reverse-mode tape. Each node stores its value and the partial
/// derivatives with respect to its parents.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
}

pub type Id = usize;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: Id) -> f64 {
        self.nodes[id].value
    }

    fn push(&mut self, value: f64, parents: &[(Id, f64)]) -> Id {
        let start = self.edges.len() as u32;
        self.edges
            .extend(parents.iter().map(|&(p, d)| (p as u32, d)));
        self.nodes.push(Node {
            value,
            start,
            len: parents.len() as u32,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: f64) -> Id {
        self.push(value, &[])
    }

    /// A new leaf carrying the value of `a` but no gradient path.
    pub fn detach(&mut self, a: Id) -> Id {
        self.leaf(self.value(a))
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.push(self.value(a) + self.value(b), &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        self.push(self.value(a) - self.value(b), &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va * vb, &[(a, vb), (b, va)])
    }

    pub fn scale(&mut self, a: Id, c: f64) -> Id {
        self.push(c * self.value(a), &[(a, c)])
    }

    pub fn add_const(&mut self, a: Id, c: f64) -> Id {
        self.push(self.value(a) + c, &[(a, 1.0)])
    }

    /// `sum_i c_i x_i` for constant coefficients.
    pub fn lin(&mut self, terms: &[(Id, f64)]) -> Id {
        let v = terms.iter().map(|&(x, c)| c * self.value(x)).sum();
        self.push(v, terms)
    }

    /// `sum_i a_i b_i`
    pub fn dot(&mut self, pairs: &[(Id, Id)]) -> Id {
        let mut v = 0.0;
        let mut parents = Vec::with_capacity(2 * pairs.len());
        for &(a, b) in pairs {
            let (va, vb) = (self.value(a), self.value(b));
            v += va * vb;
            parents.push((a, vb));
            parents.push((b, va));
        }
        self.push(v, &parents)
    }

    pub fn exp(&mut self, a: Id) -> Id {
        let v = libm::exp(self.value(a));
        self.push(v, &[(a, v)])
    }

    pub fn ln(&mut self, a: Id) -> Id {
        let va = self.value(a);
        self.push(libm::log(va), &[(a, 1.0 / va)])
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        let v = sigmoid(self.value(a));
        self.push(v, &[(a, v * (1.0 - v))])
    }

    /// Spike of `x = m - theta` with the configured surrogate derivative.
    pub fn spike(&mut self, x: Id, cfg: &NeuronConfig) -> Id {
        let vx = self.value(x);
        let (v, d) = match cfg.relaxed {
            Some(k) => {
                let s = sigmoid(k * vx);
                (s, k * s * (1.0 - s))
            }
            None => {
                let s = if vx >= 0.0 { 1.0 } else { 0.0 };
                let g = cfg.gamma;
                (s, (g - libm::fabs(vx)).max(0.0) / (g * g))
            }
        };
        self.push(v, &[(x, d)])
    }

    /// Adjoints of every node for the seeds `(node, dOut/dnode)`.
    pub fn backward_from(&self, seeds: &[(Id, f64)]) -> Vec<f64> {
        let mut adj = vec![0.0; self.nodes.len()];
        let mut top = 0;
        for &(id, g) in seeds {
            adj[id] += g;
            top = top.max(id + 1);
        }
        for i in (0..top).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = self.nodes[i];
            for &(p, d) in &self.edges[n.start as usize..(n.start + n.len) as usize] {
                adj[p as usize] += a * d;
            }
        }
        adj
    }

    pub fn backward(&self, out: Id) -> Vec<f64> {
        self.backward_from(&[(out, 1.0)])
    }
}

/// Whether gradients may flow from step `t` into earlier steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Temporal {
    Full,
    /// Previous-step state enters every step as a constant.
    Truncated,
}

/// An unrolled network on the tape.
#[derive(Debug, Clone)]
pub struct Graph {
    pub tape: Tape,
    /// Leaf ids of every parameter element: `params[layer][param][elem]`.
    pub params: Vec<Vec<Vec<Id>>>,
    /// `m[layer][t]`: potentials of the layer's (last) spiking stage, or the
    /// logits for the classifier.
    pub m: Vec<Vec<Vec<Id>>>,
    /// `out[layer][t]`: layer outputs.
    pub out: Vec<Vec<Vec<Id>>>,
    pub loss: Id,
}

impl Graph {
    pub fn values(&self, ids: &[Id]) -> Vec<f64> {
        ids.iter().map(|&i| self.tape.value(i)).collect()
    }

    /// Parameter gradients for adjoints `adj`, shaped like `layers`' params.
    pub fn param_grads(&self, layers: &[Layer<f64>], adj: &[f64]) -> Grads<f64> {
        layers
            .iter()
            .zip(&self.params)
            .map(|(layer, ps)| {
                layer
                    .params
                    .iter()
                    .zip(ps)
                    .map(|(p, ids)| {
                        Tensor::from_vec(p.shape(), ids.iter().map(|&i| adj[i]).collect()).unwrap()
                    })
                    .collect()
            })
            .collect()
    }
}

struct Population {
    u: Option<Vec<Id>>,
    s: Option<Vec<Id>>,
    a: Option<Vec<Id>>,
}

impl Population {
    fn new() -> Self {
        Self {
            u: None,
            s: None,
            a: None,
        }
    }
}

struct Builder<'a> {
    tape: Tape,
    neuron: &'a NeuronConfig,
    temporal: Temporal,
}

impl Builder<'_> {
    fn carried(&mut self, v: &Option<Vec<Id>>) -> Option<Vec<Id>> {
        v.as_ref().map(|ids| match self.temporal {
            Temporal::Full => ids.clone(),
            Temporal::Truncated => ids.iter().map(|&i| self.tape.detach(i)).collect(),
        })
    }

    /// One neuron step; returns `(m, s)`.
    fn neuron_step(&mut self, pop: &mut Population, current: &[Id], decay: Option<Id>) -> (Vec<Id>, Vec<Id>) {
        let cfg = *self.neuron;
        let u_prev = self.carried(&pop.u);
        let s_prev = self.carried(&pop.s);
        let a_prev = self.carried(&pop.a);
        let n = current.len();
        let mut m = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut a_new = Vec::new();
        for k in 0..n {
            let mk = match (&u_prev, decay) {
                (None, _) => self.tape.add_const(current[k], 0.0),
                (Some(up), Some(lam)) => {
                    let lu = self.tape.mul(lam, up[k]);
                    self.tape.add(lu, current[k])
                }
                (Some(up), None) => self.tape.lin(&[(up[k], cfg.lambda), (current[k], 1.0)]),
            };
            let theta = match cfg.model {
                NeuronModel::Alif { beta, rho } => {
                    let ak = match (&a_prev, &s_prev) {
                        (Some(ap), Some(sp)) => self.tape.lin(&[(ap[k], rho), (sp[k], 1.0)]),
                        _ => self.tape.leaf(0.0),
                    };
                    a_new.push(ak);
                    let bt = self.tape.scale(ak, beta);
                    Some(self.tape.add_const(bt, cfg.v_th))
                }
                _ => None,
            };
            let x = match theta {
                Some(th) => self.tape.sub(mk, th),
                None => self.tape.add_const(mk, -cfg.v_th),
            };
            let sk = self.tape.spike(x, &cfg);
            let uk = match (cfg.reset_grad, theta) {
                (ResetGrad::Exact, Some(th)) => {
                    let r = self.tape.mul(th, sk);
                    self.tape.sub(mk, r)
                }
                (ResetGrad::Exact, None) => self.tape.lin(&[(mk, 1.0), (sk, -cfg.v_th)]),
                (ResetGrad::Detached, th) => {
                    let th_v = th.map_or(cfg.v_th, |t| self.tape.value(t));
                    let r = self.tape.leaf(th_v * self.tape.value(sk));
                    self.tape.sub(mk, r)
                }
            };
            m.push(mk);
            s.push(sk);
            u.push(uk);
        }
        pop.u = Some(u);
        pop.s = Some(s.clone());
        if cfg.is_alif() {
            pop.a = Some(a_new);
        }
        (m, s)
    }

    /// Direct-loop convolution of `x` (`[B, C, H, W]` ids).
    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        x: &[Id],
        in_shape: &[usize],
        w: &[Id],
        w_shape: &[usize],
        stride: usize,
        pad: usize,
        out_shape: &[usize],
        batch: usize,
    ) -> Vec<Id> {
        let (ci, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
        let (co, ho, wo) = (out_shape[0], out_shape[1], out_shape[2]);
        let (kh, kw) = (w_shape[2], w_shape[3]);
        let mut out = Vec::with_capacity(batch * co * ho * wo);
        for b in 0..batch {
            for o in 0..co {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut pairs = Vec::new();
                        for c in 0..ci {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let r = (y * stride + i) as isize - pad as isize;
                                    let q = (xx * stride + j) as isize - pad as isize;
                                    if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((b * ci + c) * h + r as usize) * wd + q as usize;
                                    let wi = ((o * ci + c) * kh + i) * kw + j;
                                    pairs.push((w[wi], x[xi]));
                                }
                            }
                        }
                        out.push(self.tape.dot(&pairs));
                    }
                }
            }
        }
        out
    }

    fn dense(&mut self, x: &[Id], n_in: usize, w: &[Id], n_out: usize, bias: Option<&[Id]>, batch: usize) -> Vec<Id> {
        let mut out = Vec::with_capacity(batch * n_out);
        for b in 0..batch {
            for o in 0..n_out {
                let pairs: Vec<(Id, Id)> =
                    (0..n_in).map(|i| (w[o * n_in + i], x[b * n_in + i])).collect();
                let d = self.tape.dot(&pairs);
                out.push(match bias {
                    Some(bb) => self.tape.add(d, bb[o]),
                    None => d,
                });
            }
        }
        out
    }

    fn pool(&mut self, x: &[Id], in_shape: &[usize], k: usize, stride: usize, out_shape: &[usize], batch: usize) -> Vec<Id> {
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (ho, wo) = (out_shape[1], out_shape[2]);
        let inv = 1.0 / (k * k) as f64;
        let mut out = Vec::new();
        for b in 0..batch {
            for ch in 0..c {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut terms = Vec::new();
                        for i in 0..k {
                            for j in 0..k {
                                let idx = ((b * c + ch) * h + y * stride + i) * w + xx * stride + j;
                                terms.push((x[idx], inv));
                            }
                        }
                        out.push(self.tape.lin(&terms));
                    }
                }
            }
        }
        out
    }
}

/// Builds the unrolled graph of `layers` driven by one input per step, with
/// the summed per-step mean cross-entropy as loss.
pub fn build(
    layers: &[Layer<f64>],
    neuron: &NeuronConfig,
    inputs: &[Tensor<f64>],
    labels: &[usize],
    temporal: Temporal,
) -> Result<Graph> {
    let mut bld = Builder {
        tape: Tape::new(),
        neuron,
        temporal,
    };
    let batch = labels.len();
    let params: Vec<Vec<Vec<Id>>> = layers
        .iter()
        .map(|l| {
            l.params
                .iter()
                .map(|p| p.data().iter().map(|&v| bld.tape.leaf(v)).collect())
                .collect()
        })
        .collect();
    let plif = neuron.is_plif();
    let decays: Vec<Vec<Id>> = layers
        .iter()
        .zip(&params)
        .map(|(l, ps)| {
            let stages = l.spec.kind.neuron_stages();
            if plif {
                (0..stages)
                    .map(|i| bld.tape.sigmoid(ps[ps.len() - stages + i][0]))
                    .collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut pops: Vec<Vec<Population>> = layers
        .iter()
        .map(|l| (0..l.spec.kind.neuron_stages()).map(|_| Population::new()).collect())
        .collect();
    let mut m_rec = vec![Vec::new(); layers.len()];
    let mut out_rec = vec![Vec::new(); layers.len()];
    let mut step_losses = Vec::new();
    for frame in inputs {
        if frame.len() != batch * layers[0].spec.in_elems() {
            return Err(shape_err("oracle input", frame.shape(), &layers[0].spec.in_shape));
        }
        let mut x: Vec<Id> = frame.data().iter().map(|&v| bld.tape.leaf(v)).collect();
        for (li, layer) in layers.iter().enumerate() {
            let spec = &layer.spec;
            let p = &params[li];
            let decay = |i: usize| decays[li].get(i).copied();
            let (m, y) = match spec.kind {
                LayerKind::EncodeConv { stride, padding, .. } | LayerKind::Conv { stride, padding, .. } => {
                    let cur = bld.conv(&x, &spec.in_shape, &p[0], layer.params[0].shape(), stride, padding, &spec.out_shape, batch);
                    bld.neuron_step(&mut pops[li][0], &cur, decay(0))
                }
                LayerKind::Linear { features } => {
                    let cur = bld.dense(&x, spec.in_elems(), &p[0], features, None, batch);
                    bld.neuron_step(&mut pops[li][0], &cur, decay(0))
                }
                LayerKind::ResidualBlock { channels, stride } => {
                    let mid_shape = &spec.out_shape;
                    let c1 = bld.conv(&x, &spec.in_shape, &p[0], layer.params[0].shape(), stride, 1, mid_shape, batch);
                    let (_, s1) = bld.neuron_step(&mut pops[li][0], &c1, decay(0));
                    let c2 = bld.conv(&s1, mid_shape, &p[1], layer.params[1].shape(), 1, 1, mid_shape, batch);
                    let short = if stride != 1 || spec.in_shape[0] != channels {
                        bld.conv(&x, &spec.in_shape, &p[2], layer.params[2].shape(), stride, 0, mid_shape, batch)
                    } else {
                        x.clone()
                    };
                    let cur: Vec<Id> = c2.iter().zip(&short).map(|(&a, &b)| bld.tape.add(a, b)).collect();
                    bld.neuron_step(&mut pops[li][1], &cur, decay(1))
                }
                LayerKind::AvgPool { kernel, stride } => {
                    let y = bld.pool(&x, &spec.in_shape, kernel, stride, &spec.out_shape, batch);
                    (Vec::new(), y)
                }
                LayerKind::ProjConv { stride, .. } => {
                    let y = bld.conv(&x, &spec.in_shape, &p[0], layer.params[0].shape(), stride, 0, &spec.out_shape, batch);
                    (Vec::new(), y)
                }
                LayerKind::ProjLinear { features } => {
                    let y = bld.dense(&x, spec.in_elems(), &p[0], features, None, batch);
                    (Vec::new(), y)
                }
                LayerKind::Classifier { classes } => {
                    let y = bld.dense(&x, spec.in_elems(), &p[0], classes, Some(&p[1]), batch);
                    (y.clone(), y)
                }
            };
            m_rec[li].push(m);
            out_rec[li].push(y.clone());
            x = y;
        }
        // mean cross-entropy of this step
        let classes = layers.last().unwrap().spec.out_elems();
        let mut terms = Vec::with_capacity(batch);
        for (b, &label) in labels.iter().enumerate() {
            let row = &x[b * classes..(b + 1) * classes];
            let c = row.iter().map(|&i| bld.tape.value(i)).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<(Id, f64)> = row
                .iter()
                .map(|&z| {
                    let shifted = bld.tape.add_const(z, -c);
                    (bld.tape.exp(shifted), 1.0)
                })
                .collect();
            let sum = bld.tape.lin(&exps);
            let lse = bld.tape.ln(sum);
            let nll = bld.tape.lin(&[(lse, 1.0), (row[label], -1.0)]);
            terms.push((bld.tape.add_const(nll, c), 1.0 / batch as f64));
        }
        step_losses.push(bld.tape.lin(&terms));
    }
    let total: Vec<(Id, f64)> = step_losses.iter().map(|&l| (l, 1.0)).collect();
    let loss = bld.tape.lin(&total);
    Ok(Graph {
        tape: bld.tape,
        params,
        m: m_rec,
        out: out_rec,
        loss,
    })
}

/// Loss and parameter gradients of `layers` on `input` replicated over
/// `timesteps` steps.
pub fn grads(
    layers: &[Layer<f64>],
    neuron: &NeuronConfig,
    timesteps: usize,
    input: &Tensor<f64>,
    labels: &[usize],
    temporal: Temporal,
) -> Result<(f64, Grads<f64>)> {
    let inputs = vec![input.clone(); timesteps];
    let g = build(layers, neuron, &inputs, labels, temporal)?;
    let adj = g.tape.backward(g.loss);
    Ok((g.tape.value(g.loss), g.param_grads(layers, &adj)))
}

/// Reference for partitioned learning: every scope's graph is built on its
/// own, driven by the forward values of the previous scope's output, and
/// differentiated without temporal terms.
///
/// Returns the gradients of the main layers and of each auxiliary network.
pub fn partitioned_grads(
    main: &[Layer<f64>],
    boundaries: &[usize],
    auxes: &[&[Layer<f64>]],
    neuron: &NeuronConfig,
    timesteps: usize,
    input: &Tensor<f64>,
    labels: &[usize],
) -> Result<(Grads<f64>, Vec<Grads<f64>>)> {
    let batch = labels.len();
    let mut frames = vec![input.clone(); timesteps];
    let mut main_grads: Grads<f64> = Vec::new();
    let mut aux_grads = Vec::new();
    let mut lo = 0;
    for (k, &hi) in boundaries.iter().enumerate() {
        let last = k + 1 == boundaries.len();
        let mut scope: Vec<Layer<f64>> = main[lo..hi].to_vec();
        if !last {
            scope.extend(auxes[k].iter().cloned());
        }
        let g = build(&scope, neuron, &frames, labels, Temporal::Truncated)?;
        let adj = g.tape.backward(g.loss);
        let mut grads = g.param_grads(&scope, &adj);
        let own = hi - lo;
        if !last {
            aux_grads.push(grads.split_off(own));
        }
        main_grads.extend(grads);
        // next scope input: forward values of this scope's output
        let out_shape = &main[hi - 1].spec.out_shape;
        let mut shape = vec![batch];
        shape.extend_from_slice(out_shape);
        frames = g.out[own - 1]
            .iter()
            .map(|ids| Tensor::from_vec(&shape, g.values(ids)).unwrap())
            .collect();
        lo = hi;
    }
    Ok((main_grads, aux_grads))
}

/// Decomposition of the gradient at the potentials of spiking layer `j`
/// (0-based) into per-step contributions routed through layer `j + 1` at
/// step `t_prime` (1-based).
///
/// Entry `g` of the result is the contribution at step `t_prime - g`:
/// `delta^{j+1}[t'] dm^{j+1}[t']/dm^j[t'] dm^j[t']/dm^j[t'-g]`, with
/// `delta` the full gradient at `m^{j+1}[t']`. Entry 0 is the within-step
/// term; entries `g >= 1` are what temporal truncation drops.
pub fn temporal_contributions(graph: &Graph, j: usize, t_prime: usize) -> Vec<Vec<f64>> {
    let tape = &graph.tape;
    let full = tape.backward(graph.loss);
    let upper = &graph.m[j + 1][t_prime - 1];
    let seeds: Vec<(Id, f64)> = upper.iter().map(|&i| (i, full[i])).collect();
    let via = tape.backward_from(&seeds);
    let here = &graph.m[j][t_prime - 1];
    let a: Vec<f64> = here.iter().map(|&i| via[i]).collect();
    let seeds: Vec<(Id, f64)> = here.iter().zip(&a).map(|(&i, &v)| (i, v)).collect();
    let back = tape.backward_from(&seeds);
    let mut out = vec![a];
    for g in 1..t_prime {
        out.push(graph.m[j][t_prime - 1 - g].iter().map(|&i| back[i]).collect());
    }
    out
}

/// Full gradient at `m^j[t]` (1-based `t`).
pub fn potential_grad(graph: &Graph, j: usize, t: usize) -> Vec<f64> {
    let full = graph.tape.backward(graph.loss);
    graph.m[j][t - 1].iter().map(|&i| full[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_derivatives() {
        let mut t = Tape::new();
        let x = t.leaf(0.7);
        let y = t.leaf(-1.3);
        let p = t.mul(x, y);
        let e = t.exp(p);
        let l = t.ln(e);
        let adj = t.backward(l);
        // d/dx ln(exp(xy)) = y
        assert!((adj[x] - -1.3).abs() < 1e-15);
        assert!((adj[y] - 0.7).abs() < 1e-15);
        let s = t.sigmoid(x);
        let adj = t.backward(s);
        let v = sigmoid(0.7);
        assert!((adj[x] - v * (1.0 - v)).abs() < 1e-15);
    }

    #[test]
    fn detach_blocks_gradient_and_reuse_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(2.0);
        let d = t.detach(x);
        let a = t.mul(x, d);
        let b = t.add(a, x);
        let adj = t.backward(b);
        // b = x * const(2) + x
        assert_eq!(adj[x], 3.0);
        assert_eq!(adj[d], 2.0);
    }

    #[test]
    fn spike_surrogate_is_the_triangle() {
        let cfg = NeuronConfig::default();
        let mut t = Tape::new();
        for (x, s, g) in [(0.25, 1.0, 0.75), (-0.5, 0.0, 0.5), (1.5, 1.0, 0.0)] {
            let xi = t.leaf(x);
            let si = t.spike(xi, &cfg);
            assert_eq!(t.value(si), s);
            assert_eq!(t.backward(si)[xi], g);
        }
    }

    #[test]
    fn seeded_sweep_is_linear_in_seeds() {
        let mut t = Tape::new();
        let x = t.leaf(1.5);
        let a = t.scale(x, 2.0);
        let b = t.scale(x, -3.0);
        let adj = t.backward_from(&[(a, 0.5), (b, 2.0)]);
        assert_eq!(adj[x], 0.5 * 2.0 + 2.0 * -3.0);
    }
}
