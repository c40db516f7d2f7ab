use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::out_extent;
use crate::neuron::NeuronConfig;

/// Kind and hyperparameters of one layer.
///
/// Every layer except pooling, projections and the classifier is followed by
/// a spiking population. A residual block is two 3x3 conv + neuron stages
/// with an additive shortcut into the second stage's input current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum LayerKind {
    /// First layer: convolves the analog input and emits spikes.
    EncodeConv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        features: usize,
    },
    #[cfg_attr(feature = "serde", serde(rename = "avgpool"))]
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    ResidualBlock {
        channels: usize,
        stride: usize,
    },
    /// Non-spiking 1x1 convolution used to re-stitch shapes inside
    /// auxiliary networks.
    ProjConv {
        channels: usize,
        stride: usize,
    },
    /// Non-spiking dense projection to a flattened shape.
    ProjLinear {
        features: usize,
    },
    /// Non-spiking linear readout producing logits.
    Classifier {
        classes: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::EncodeConv { .. } => "encode_conv",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Linear { .. } => "linear",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::ResidualBlock { .. } => "residual_block",
            LayerKind::ProjConv { .. } => "proj_conv",
            LayerKind::ProjLinear { .. } => "proj_linear",
            LayerKind::Classifier { .. } => "classifier",
        }
    }

    /// Number of spiking populations inside the layer.
    pub fn neuron_stages(&self) -> usize {
        match self {
            LayerKind::EncodeConv { .. } | LayerKind::Conv { .. } | LayerKind::Linear { .. } => 1,
            LayerKind::ResidualBlock { .. } => 2,
            _ => 0,
        }
    }

    pub fn has_params(&self) -> bool {
        !matches!(self, LayerKind::AvgPool { .. })
    }

    /// Output shape for a given per-sample input shape.
    pub fn infer(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |op: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::InvalidNetwork(format!(
                    "{op} needs a [C, H, W] input, got {input:?}"
                ))),
            }
        };
        let extent = |x: usize, k: usize, s: usize, p: usize| {
            out_extent(x, k, s, p).ok_or_else(|| {
                Error::InvalidNetwork(format!(
                    "{} on {input:?} gives an empty output",
                    self.name()
                ))
            })
        };
        match *self {
            LayerKind::EncodeConv {
                channels,
                kernel,
                stride,
                padding,
            }
            | LayerKind::Conv {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let (_, h, w) = spatial(self.name())?;
                Ok(vec![
                    channels,
                    extent(h, kernel, stride, padding)?,
                    extent(w, kernel, stride, padding)?,
                ])
            }
            LayerKind::ResidualBlock { channels, stride } => {
                let (_, h, w) = spatial(self.name())?;
                Ok(vec![channels, extent(h, 3, stride, 1)?, extent(w, 3, stride, 1)?])
            }
            LayerKind::ProjConv { channels, stride } => {
                let (_, h, w) = spatial(self.name())?;
                Ok(vec![channels, extent(h, 1, stride, 0)?, extent(w, 1, stride, 0)?])
            }
            LayerKind::AvgPool { kernel, stride } => {
                let (c, h, w) = spatial(self.name())?;
                Ok(vec![
                    c,
                    extent(h, kernel, stride, 0)?,
                    extent(w, kernel, stride, 0)?,
                ])
            }
            LayerKind::Linear { features } | LayerKind::ProjLinear { features } => {
                Ok(vec![features])
            }
            LayerKind::Classifier { classes } => Ok(vec![classes]),
        }
    }
}

/// A layer with its resolved shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub param_count: usize,
    /// Output channels (or features); the width score used by auxiliary
    /// construction.
    pub channels: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_shape: &[usize]) -> Result<Self> {
        let out_shape = kind.infer(in_shape)?;
        let cin = in_shape[0];
        let param_count = match kind {
            LayerKind::EncodeConv {
                channels, kernel, ..
            }
            | LayerKind::Conv {
                channels, kernel, ..
            } => channels * cin * kernel * kernel,
            LayerKind::Linear { features } | LayerKind::ProjLinear { features } => {
                features * numel(in_shape)
            }
            LayerKind::ResidualBlock { channels, stride } => {
                let shortcut = if stride != 1 || cin != channels {
                    channels * cin
                } else {
                    0
                };
                channels * cin * 9 + channels * channels * 9 + shortcut
            }
            LayerKind::ProjConv { channels, .. } => channels * cin,
            LayerKind::AvgPool { .. } => 0,
            LayerKind::Classifier { classes } => classes * numel(in_shape) + classes,
        };
        let channels = match kind {
            LayerKind::AvgPool { .. } => cin,
            _ => out_shape[0],
        };
        Ok(Self {
            kind,
            in_shape: in_shape.to_vec(),
            out_shape,
            param_count,
            channels,
        })
    }

    pub fn in_elems(&self) -> usize {
        numel(&self.in_shape)
    }

    pub fn out_elems(&self) -> usize {
        numel(&self.out_shape)
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.kind, LayerKind::Classifier { .. })
    }

    /// Elements cached per sample and per step to compute this layer's
    /// weight gradient: afferent activity plus membrane potentials (and the
    /// extra neuron state of adaptive or parametric models).
    pub fn cached_elems(&self, neuron: &NeuronConfig) -> usize {
        let per_population = |n: usize| {
            n * (1 + usize::from(neuron.is_alif()) + usize::from(neuron.is_plif()))
        };
        match self.kind {
            LayerKind::EncodeConv { .. } | LayerKind::Conv { .. } | LayerKind::Linear { .. } => {
                self.in_elems() + per_population(self.out_elems())
            }
            LayerKind::ResidualBlock { .. } => {
                // stage 1: s_in + m1, stage 2: s1 + m2
                self.in_elems()
                    + per_population(self.out_elems())
                    + self.out_elems()
                    + per_population(self.out_elems())
            }
            LayerKind::ProjConv { .. } | LayerKind::ProjLinear { .. } => self.in_elems(),
            LayerKind::AvgPool { .. } => 0,
            LayerKind::Classifier { .. } => self.in_elems() + self.out_elems(),
        }
    }

    /// Bytes cached per step for a batch of `batch` samples.
    pub fn footprint(&self, neuron: &NeuronConfig, batch: usize, elem_bytes: usize) -> u64 {
        (self.cached_elems(neuron) * batch * elem_bytes) as u64
    }
}

/// Ordered layer description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub timesteps: usize,
    pub neuron: NeuronConfig,
}

impl NetworkSpec {
    pub fn new(
        input_shape: &[usize],
        kinds: &[LayerKind],
        timesteps: usize,
        neuron: NeuronConfig,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        if timesteps == 0 {
            return Err(Error::InvalidNetwork("timesteps must be at least 1".into()));
        }
        neuron.validate()?;
        let last = kinds.len() - 1;
        let LayerKind::Classifier { classes } = kinds[last] else {
            return Err(Error::InvalidNetwork("last layer must be a classifier".into()));
        };
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            match kind {
                LayerKind::Classifier { .. } if i != last => {
                    return Err(Error::InvalidNetwork(format!(
                        "classifier at layer {} is not last",
                        i + 1
                    )))
                }
                LayerKind::EncodeConv { .. } if i != 0 => {
                    return Err(Error::InvalidNetwork(format!(
                        "encode_conv at layer {} is not first",
                        i + 1
                    )))
                }
                _ => {}
            }
            let spec = LayerSpec::new(*kind, &shape)?;
            shape = spec.out_shape.clone();
            layers.push(spec);
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            num_classes: classes,
            timesteps,
            neuron,
        })
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn with_timesteps(&self, timesteps: usize) -> Result<Self> {
        Self::new(&self.input_shape, &self.kinds(), timesteps, self.neuron)
    }

    pub fn with_neuron(&self, neuron: NeuronConfig) -> Result<Self> {
        Self::new(&self.input_shape, &self.kinds(), self.timesteps, neuron)
    }

    /// Footprint of layer `layer` (1-based), per step, for `batch` samples.
    pub fn layer_footprint(&self, layer: usize, batch: usize, elem_bytes: usize) -> Result<u64> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                len: self.layers.len(),
            });
        }
        Ok(self.layers[layer - 1].footprint(&self.neuron, batch, elem_bytes))
    }

    /// All per-layer footprints in order.
    pub fn footprints(&self, batch: usize, elem_bytes: usize) -> Vec<u64> {
        self.layers
            .iter()
            .map(|l| l.footprint(&self.neuron, batch, elem_bytes))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count).sum::<usize>()
            + if self.neuron.is_plif() {
                self.layers.iter().map(|l| l.kind.neuron_stages()).sum()
            } else {
                0
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::NeuronModel;

    fn mnist_like() -> NetworkSpec {
        NetworkSpec::new(
            &[1, 28, 28],
            &[
                LayerKind::EncodeConv {
                    channels: 16,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerKind::Conv {
                    channels: 32,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerKind::Classifier { classes: 10 },
            ],
            4,
            NeuronConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn shapes_chain() {
        let net = mnist_like();
        assert_eq!(net.layers[0].out_shape, vec![16, 14, 14]);
        assert_eq!(net.layers[1].out_shape, vec![32, 7, 7]);
        assert_eq!(net.layers[2].in_shape, vec![32, 7, 7]);
        assert_eq!(net.num_classes, 10);
        for w in net.layers.windows(2) {
            assert_eq!(w[0].out_shape, w[1].in_shape);
        }
    }

    #[test]
    fn linear_footprint_example() {
        // 100 afferent spikes + 10 potentials, 8-byte elements
        let net = NetworkSpec::new(
            &[100],
            &[LayerKind::Linear { features: 10 }, LayerKind::Classifier { classes: 2 }],
            1,
            NeuronConfig::default(),
        )
        .unwrap();
        assert_eq!(net.layer_footprint(1, 1, 8).unwrap(), 880);
        assert_eq!(net.layer_footprint(1, 2, 8).unwrap(), 1760);
    }

    #[test]
    fn conv_footprint_hand_count() {
        let net = mnist_like();
        // s0: 1*28*28 = 784, m1: 16*14*14 = 3136
        assert_eq!(net.layer_footprint(1, 1, 4).unwrap(), (784 + 3136) * 4);
        // s1: 3136, m2: 32*7*7 = 1568
        assert_eq!(net.layer_footprint(2, 1, 8).unwrap(), (3136 + 1568) * 8);
        // classifier: 1568 inputs + 10 logits
        assert_eq!(net.layer_footprint(3, 1, 8).unwrap(), (1568 + 10) * 8);
        assert!(net.layer_footprint(0, 1, 8).is_err());
        assert!(net.layer_footprint(4, 1, 8).is_err());
    }

    #[test]
    fn residual_footprint_is_sum_of_stages() {
        let net = NetworkSpec::new(
            &[4, 8, 8],
            &[
                LayerKind::ResidualBlock {
                    channels: 6,
                    stride: 2,
                },
                LayerKind::Classifier { classes: 3 },
            ],
            1,
            NeuronConfig::default(),
        )
        .unwrap();
        let l = &net.layers[0];
        assert_eq!(l.out_shape, vec![6, 4, 4]);
        assert_eq!(l.cached_elems(&net.neuron), (256 + 96) + (96 + 96));
        assert_eq!(l.param_count, 6 * 4 * 9 + 6 * 6 * 9 + 6 * 4);
    }

    #[test]
    fn adaptive_neurons_add_state() {
        let alif = NeuronConfig {
            model: NeuronModel::alif(),
            ..NeuronConfig::default()
        };
        let net = mnist_like().with_neuron(alif).unwrap();
        assert_eq!(net.layer_footprint(2, 1, 1).unwrap(), 3136 + 2 * 1568);
    }

    #[test]
    fn structural_validation() {
        let n = NeuronConfig::default();
        assert!(NetworkSpec::new(&[4], &[LayerKind::Linear { features: 2 }], 1, n).is_err());
        assert!(NetworkSpec::new(
            &[4],
            &[
                LayerKind::Classifier { classes: 2 },
                LayerKind::Classifier { classes: 2 }
            ],
            1,
            n
        )
        .is_err());
        assert!(NetworkSpec::new(&[4], &[LayerKind::Classifier { classes: 2 }], 0, n).is_err());
        assert!(NetworkSpec::new(
            &[1, 2, 2],
            &[
                LayerKind::Conv {
                    channels: 1,
                    kernel: 5,
                    stride: 1,
                    padding: 0
                },
                LayerKind::Classifier { classes: 2 }
            ],
            1,
            n
        )
        .is_err());
    }
}
