//! Layered network descriptions, their cached-state footprints and
//! time-unrolled execution.

mod forward;
mod layer;
mod spec;

pub(crate) use forward::check_boundaries;
pub use forward::{firing_rates, forward_unrolled, mean_logits, CachePolicy, Unrolled};
pub use layer::{Layer, LayerCache, LayerCarry, LayerState};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::neuron::NeuronConfig;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Default weight-init gain: Kaiming-style `sqrt(2)`.
pub const DEFAULT_INIT_GAIN: f64 = core::f64::consts::SQRT_2;

/// Gradients of a layer stack, one vector per layer in parameter order.
pub type Grads<F> = Vec<Vec<Tensor<F>>>;

/// A network with parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn init(spec: &NetworkSpec, rng: &mut Rng, gain: f64) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| Layer::init(l, &spec.neuron, rng, gain))
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_params(spec: &NetworkSpec, params: Vec<Vec<Tensor<F>>>) -> Result<Self> {
        let mut rng = Rng::new(0);
        let template = Self::init(spec, &mut rng, 1.0);
        if params.len() != template.layers.len() {
            return Err(Error::InvalidNetwork(alloc::format!(
                "{} parameter groups for {} layers",
                params.len(),
                template.layers.len()
            )));
        }
        let mut layers = template.layers;
        for (i, (layer, ps)) in layers.iter_mut().zip(params).enumerate() {
            let want: Vec<&[usize]> = layer.params.iter().map(|p| p.shape()).collect();
            let got: Vec<&[usize]> = ps.iter().map(|p| p.shape()).collect();
            if want != got {
                return Err(Error::InvalidNetwork(alloc::format!(
                    "layer {} parameter shapes {:?} do not match {:?}",
                    i + 1,
                    got,
                    want
                )));
            }
            layer.params = ps;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn neuron(&self) -> &NeuronConfig {
        &self.spec.neuron
    }

    pub fn zero_grads(&self) -> Grads<F> {
        zero_grads(&self.layers)
    }

    /// Bytes held by parameters.
    pub fn param_bytes(&self) -> u64 {
        param_bytes(&self.layers)
    }
}

pub fn zero_grads<F: Scalar>(layers: &[Layer<F>]) -> Grads<F> {
    layers.iter().map(Layer::zero_grads).collect()
}

pub fn param_bytes<F: Scalar>(layers: &[Layer<F>]) -> u64 {
    layers
        .iter()
        .flat_map(|l| l.params.iter())
        .map(Tensor::bytes)
        .sum()
}
