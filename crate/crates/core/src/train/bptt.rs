use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ledger::{LayerTag, MemoryLedger};
use crate::network::{
    forward_unrolled, zero_grads, CachePolicy, Grads, Layer, LayerCache, LayerCarry, Network,
};
use crate::neuron::NeuronConfig;
use crate::tensor::{Scalar, Tensor};

use super::loss::cross_entropy;
use super::GradOutput;

/// Full backpropagation through time: forward every step with all caches,
/// then walk steps `T..1` and, within a step, layers `L..1`.
pub fn bptt_grads<F: Scalar>(
    net: &Network<F>,
    input: &Tensor<F>,
    labels: &[usize],
    mut ledger: Option<&mut MemoryLedger>,
) -> Result<GradOutput<F>> {
    let un = forward_unrolled(
        net,
        input,
        &CachePolicy::AllStepsAllLayers,
        ledger.as_deref_mut(),
    )?;
    let mean_logits = un.mean_logits();
    let mut loss = 0.0;
    let mut logit_grads = Vec::with_capacity(un.logits.len());
    for l in &un.logits {
        let (v, g) = cross_entropy(l, labels)?;
        loss += v;
        logit_grads.push(g);
    }
    let grads = bptt_backward(&net.layers, net.neuron(), un.caches, logit_grads, ledger)?;
    Ok(GradOutput {
        loss,
        local_losses: alloc::vec![loss],
        grads,
        aux_grads: Vec::new(),
        mean_logits,
    })
}

/// Backward pass over `caches[t][l]` given the loss gradient with respect to
/// each step's logits. Each cache is released (and reported) once used.
pub fn bptt_backward<F: Scalar>(
    layers: &[Layer<F>],
    neuron: &NeuronConfig,
    mut caches: Vec<Vec<LayerCache<F>>>,
    logit_grads: Vec<Tensor<F>>,
    mut ledger: Option<&mut MemoryLedger>,
) -> Result<Grads<F>> {
    let steps = caches.len();
    if logit_grads.len() != steps {
        return Err(Error::MissingCache {
            layer: layers.len(),
            step: logit_grads.len().min(steps) + 1,
        });
    }
    let mut grads = zero_grads(layers);
    let mut carries: Vec<LayerCarry<F>> = layers
        .iter()
        .map(|l| LayerCarry::empty(l.spec.kind.neuron_stages()))
        .collect();
    for (t, g_logits) in (1..=steps).rev().zip(logit_grads.into_iter().rev()) {
        let mut step = caches.pop().unwrap();
        if step.len() != layers.len() {
            return Err(Error::MissingCache {
                layer: step.len() + 1,
                step: t,
            });
        }
        let mut g = g_logits;
        for l in (0..layers.len()).rev() {
            let cache = step.pop().unwrap();
            let gi = layers[l].backward_step(
                &cache,
                g,
                &mut carries[l],
                &mut grads[l],
                neuron,
                l > 0,
            )?;
            if let Some(led) = ledger.as_deref_mut() {
                led.free(LayerTag::Main(l + 1), t, cache.bytes())?;
            }
            match gi {
                Some(gi) => g = gi,
                None => break,
            }
        }
    }
    Ok(grads)
}
