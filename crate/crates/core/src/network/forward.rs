use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ledger::{LayerTag, MemoryLedger};
use crate::tensor::{Scalar, Tensor};

use super::layer::{LayerCache, LayerState};
use super::Network;

/// Which forward values are kept for a later backward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CachePolicy {
    /// Every layer at every step stays cached (what BPTT needs).
    AllStepsAllLayers,
    /// Only the current step of the current scope is cached; scopes are
    /// given by their closing layer indices (1-based, last one equals L).
    CurrentStepCurrentScope(Vec<usize>),
}

/// Result of a time-unrolled forward pass.
#[derive(Debug, Clone)]
pub struct Unrolled<F> {
    /// Classifier output of each step, `[B, classes]`.
    pub logits: Vec<Tensor<F>>,
    /// `caches[t][l]` for retained steps; empty under the per-scope policy.
    pub caches: Vec<Vec<LayerCache<F>>>,
}

impl<F: Scalar> Unrolled<F> {
    /// Logits averaged over steps.
    pub fn mean_logits(&self) -> Tensor<F> {
        let mut acc = Tensor::zeros(self.logits[0].shape());
        for l in &self.logits {
            acc.add_assign(l).unwrap();
        }
        acc.scale(F::one() / F::from_f64(self.logits.len() as f64))
    }
}

pub(crate) fn check_boundaries(boundaries: &[usize], layers: usize) -> Result<()> {
    let ok = !boundaries.is_empty()
        && boundaries.windows(2).all(|w| w[0] < w[1])
        && boundaries[0] >= 1
        && *boundaries.last().unwrap() == layers;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(alloc::format!(
            "boundaries {boundaries:?} are not a partition of {layers} layers"
        )))
    }
}

/// Runs `net` for `spec.timesteps` steps on an input replicated over time.
///
/// Every cache and free is reported to `ledger` when one is given.
pub fn forward_unrolled<F: Scalar>(
    net: &Network<F>,
    input: &Tensor<F>,
    policy: &CachePolicy,
    mut ledger: Option<&mut MemoryLedger>,
) -> Result<Unrolled<F>> {
    let n = net.layers.len();
    let scopes: Vec<usize> = match policy {
        CachePolicy::AllStepsAllLayers => alloc::vec![n],
        CachePolicy::CurrentStepCurrentScope(b) => {
            check_boundaries(b, n)?;
            b.clone()
        }
    };
    let keep_all = matches!(policy, CachePolicy::AllStepsAllLayers);
    let batch = input.shape().first().copied().unwrap_or(0);
    let neuron = net.neuron();
    let mut states: Vec<LayerState<F>> =
        net.layers.iter().map(|l| l.init_state(batch, neuron)).collect();
    let mut out = Unrolled {
        logits: Vec::with_capacity(net.spec.timesteps),
        caches: Vec::new(),
    };
    for t in 1..=net.spec.timesteps {
        let mut x = input.clone();
        let mut step_caches = Vec::with_capacity(n);
        let mut lo = 0;
        #[allow(clippy::needless_range_loop)]
        for &hi in &scopes {
            let mut scope_bytes = Vec::with_capacity(hi - lo);
            for l in lo..hi {
                let (y, cache) = net.layers[l].forward_step(&x, &mut states[l], neuron, true)?;
                let cache = cache.unwrap();
                let bytes = cache.bytes();
                if let Some(led) = ledger.as_deref_mut() {
                    led.cache(LayerTag::Main(l + 1), t, bytes)?;
                }
                scope_bytes.push(bytes);
                if keep_all {
                    step_caches.push(cache);
                }
                x = y;
            }
            if !keep_all {
                if let Some(led) = ledger.as_deref_mut() {
                    for (i, &bytes) in scope_bytes.iter().enumerate() {
                        led.free(LayerTag::Main(lo + i + 1), t, bytes)?;
                    }
                }
            }
            lo = hi;
        }
        out.logits.push(x);
        if keep_all {
            out.caches.push(step_caches);
        }
    }
    Ok(out)
}

/// Classifier logits averaged over steps, without keeping any cache.
pub fn mean_logits<F: Scalar>(net: &Network<F>, input: &Tensor<F>) -> Result<Tensor<F>> {
    let batch = input.shape().first().copied().unwrap_or(0);
    let neuron = net.neuron();
    let mut states: Vec<LayerState<F>> =
        net.layers.iter().map(|l| l.init_state(batch, neuron)).collect();
    let mut acc: Option<Tensor<F>> = None;
    for _ in 0..net.spec.timesteps {
        let mut x = input.clone();
        for (layer, state) in net.layers.iter().zip(states.iter_mut()) {
            x = layer.forward_step(&x, state, neuron, false)?.0;
        }
        match acc.as_mut() {
            Some(a) => a.add_assign(&x)?,
            None => acc = Some(x),
        }
    }
    Ok(acc
        .unwrap()
        .scale(F::one() / F::from_f64(net.spec.timesteps as f64)))
}

/// Firing rate (mean output over steps) of every layer below the classifier,
/// each as `[B, features]`.
pub fn firing_rates<F: Scalar>(net: &Network<F>, input: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
    let batch = input.shape().first().copied().unwrap_or(0);
    let neuron = net.neuron();
    let hidden = net.layers.len() - 1;
    let mut states: Vec<LayerState<F>> =
        net.layers.iter().map(|l| l.init_state(batch, neuron)).collect();
    let mut rates: Vec<Tensor<F>> = net.layers[..hidden]
        .iter()
        .map(|l| Tensor::zeros(&[batch, l.spec.out_elems()]))
        .collect();
    for _ in 0..net.spec.timesteps {
        let mut x = input.clone();
        for l in 0..hidden {
            let (y, _) = net.layers[l].forward_step(&x, &mut states[l], neuron, false)?;
            for (r, &v) in rates[l].data_mut().iter_mut().zip(y.data()) {
                *r += v;
            }
            x = y;
        }
    }
    let inv = F::one() / F::from_f64(net.spec.timesteps as f64);
    for r in &mut rates {
        *r = r.scale(inv);
    }
    Ok(rates)
}
