use alloc::vec::Vec;

use crate::aux::AuxiliarySpec;
use crate::error::{Error, Result};
use crate::ledger::{LayerTag, MemoryLedger};
use crate::network::{
    check_boundaries, zero_grads, Grads, Layer, LayerCache, LayerCarry, LayerState,
    Network,
};
use crate::neuron::NeuronConfig;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::loss::cross_entropy;
use super::GradOutput;

/// Runtime auxiliary network: its layers are trained with the owning
/// subnetwork and dropped for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxNet<F> {
    pub spec: AuxiliarySpec,
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> AuxNet<F> {
    pub fn init(spec: &AuxiliarySpec, neuron: &NeuronConfig, rng: &mut Rng, gain: f64) -> Self {
        Self {
            spec: spec.clone(),
            layers: spec
                .layers
                .iter()
                .map(|l| Layer::init(l, neuron, rng, gain))
                .collect(),
        }
    }

    /// Copies parameters of reused layers from `main` where shapes agree.
    pub fn copy_from(&mut self, main: &Network<F>) {
        for (layer, origin) in self.layers.iter_mut().zip(&self.spec.origin) {
            if let Some(o) = origin {
                let src = &main.layers[o - 1];
                if src.spec == layer.spec {
                    layer.params = src.params.clone();
                }
            }
        }
    }
}

/// Forward one step of `layers` with caching, reporting each cache.
#[allow(clippy::too_many_arguments)]
fn forward_scope<F: Scalar>(
    layers: &[Layer<F>],
    states: &mut [LayerState<F>],
    neuron: &NeuronConfig,
    mut x: Tensor<F>,
    t: usize,
    tag: impl Fn(usize) -> LayerTag,
    caches: &mut Vec<LayerCache<F>>,
    ledger: &mut Option<&mut MemoryLedger>,
) -> Result<Tensor<F>> {
    for (i, (layer, state)) in layers.iter().zip(states.iter_mut()).enumerate() {
        let (y, cache) = layer.forward_step(&x, state, neuron, true)?;
        let cache = cache.unwrap();
        if let Some(led) = ledger.as_deref_mut() {
            led.cache(tag(i), t, cache.bytes())?;
        }
        caches.push(cache);
        x = y;
    }
    Ok(x)
}

/// Spatial-only backward through `layers` (no temporal carry), consuming
/// `caches`. Returns the gradient at the bottom input if requested.
#[allow(clippy::too_many_arguments)]
fn backward_scope<F: Scalar>(
    layers: &[Layer<F>],
    caches: &mut Vec<LayerCache<F>>,
    grads: &mut [Vec<Tensor<F>>],
    neuron: &NeuronConfig,
    mut g: Tensor<F>,
    t: usize,
    tag: impl Fn(usize) -> LayerTag,
    want_bottom: bool,
    ledger: &mut Option<&mut MemoryLedger>,
) -> Result<Option<Tensor<F>>> {
    for i in (0..layers.len()).rev() {
        let cache = caches.pop().ok_or(Error::MissingCache { layer: i + 1, step: t })?;
        let mut carry = LayerCarry::empty(layers[i].spec.kind.neuron_stages());
        let gi = layers[i].backward_step(
            &cache,
            g,
            &mut carry,
            &mut grads[i],
            neuron,
            i > 0 || want_bottom,
        )?;
        if let Some(led) = ledger.as_deref_mut() {
            led.free(tag(i), t, cache.bytes())?;
        }
        match gi {
            Some(gi) => g = gi,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}

/// Partitioned, temporally decoupled learning.
///
/// At every step each scope (subnetwork `k` plus its auxiliary, or the real
/// classifier for the last subnetwork) is run forward on the detached spikes
/// of scope `k - 1`, differentiated spatially only, and its caches are freed
/// before the next scope starts. `boundaries` are the closing layer indices;
/// `auxes[k - 1]` serves subnetwork `k < K`.
pub fn stdl_grads<F: Scalar>(
    net: &Network<F>,
    boundaries: &[usize],
    auxes: &[AuxNet<F>],
    input: &Tensor<F>,
    labels: &[usize],
    mut ledger: Option<&mut MemoryLedger>,
) -> Result<GradOutput<F>> {
    let n = net.layers.len();
    check_boundaries(boundaries, n)?;
    let k_total = boundaries.len();
    if auxes.len() < k_total - 1 {
        return Err(Error::MissingAuxiliary(auxes.len() + 1));
    }
    let neuron = net.neuron();
    let batch = input.shape().first().copied().unwrap_or(0);
    let mut states: Vec<LayerState<F>> =
        net.layers.iter().map(|l| l.init_state(batch, neuron)).collect();
    let mut aux_states: Vec<Vec<LayerState<F>>> = auxes[..k_total - 1]
        .iter()
        .map(|a| a.layers.iter().map(|l| l.init_state(batch, neuron)).collect())
        .collect();
    let mut grads = zero_grads(&net.layers);
    let mut aux_grads: Vec<Grads<F>> = auxes[..k_total - 1]
        .iter()
        .map(|a| zero_grads(&a.layers))
        .collect();
    let mut local_losses = alloc::vec![0.0; k_total];
    let mut mean_logits: Option<Tensor<F>> = None;
    let mut caches = Vec::new();
    let mut aux_caches = Vec::new();
    for t in 1..=net.spec.timesteps {
        let mut x = input.clone();
        let mut lo = 0;
        for (k, &hi) in boundaries.iter().enumerate() {
            let scope = &net.layers[lo..hi];
            let out = forward_scope(
                scope,
                &mut states[lo..hi],
                neuron,
                x,
                t,
                |i| LayerTag::Main(lo + i + 1),
                &mut caches,
                &mut ledger,
            )?;
            let last = k + 1 == k_total;
            let owner = k + 1;
            let aux_tag = |i: usize| LayerTag::Aux {
                owner,
                index: i + 1,
            };
            let logits = if last {
                out.clone()
            } else {
                forward_scope(
                    &auxes[k].layers,
                    &mut aux_states[k],
                    neuron,
                    out.clone(),
                    t,
                    aux_tag,
                    &mut aux_caches,
                    &mut ledger,
                )?
            };
            let (v, g) = cross_entropy(&logits, labels)?;
            local_losses[k] += v;
            if last {
                match mean_logits.as_mut() {
                    Some(m) => m.add_assign(&logits)?,
                    None => mean_logits = Some(logits),
                }
            }
            let g_top = if last {
                g
            } else {
                backward_scope(
                    &auxes[k].layers,
                    &mut aux_caches,
                    &mut aux_grads[k],
                    neuron,
                    g,
                    t,
                    aux_tag,
                    true,
                    &mut ledger,
                )?
                .unwrap()
            };
            backward_scope(
                scope,
                &mut caches,
                &mut grads[lo..hi],
                neuron,
                g_top,
                t,
                |i| LayerTag::Main(lo + i + 1),
                false,
                &mut ledger,
            )?;
            // stop-gradient: the next scope sees values only
            x = out;
            lo = hi;
        }
    }
    let mean_logits = mean_logits
        .unwrap()
        .scale(F::one() / F::from_f64(net.spec.timesteps as f64));
    Ok(GradOutput {
        loss: local_losses[k_total - 1],
        local_losses,
        grads,
        aux_grads,
        mean_logits,
    })
}

/// Temporally truncated learning with intact spatial dependencies: the
/// single-scope case of [`stdl_grads`].
pub fn sltt_grads<F: Scalar>(
    net: &Network<F>,
    input: &Tensor<F>,
    labels: &[usize],
    ledger: Option<&mut MemoryLedger>,
) -> Result<GradOutput<F>> {
    stdl_grads(net, &[net.layers.len()], &[], input, labels, ledger)
}
