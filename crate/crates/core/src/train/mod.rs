//! Gradient regimes and the training loop.
//!
//! * BPTT keeps every layer at every step and backpropagates through both
//!   layers and time.
//! * The truncated online regime drops every cross-step gradient term while
//!   keeping the spatial path through the whole network.
//! * The partitioned regime additionally cuts the network into subnetworks
//!   trained by local losses at auxiliary heads, with stop-gradients between
//!   them.

mod bptt;
pub mod loss;
pub mod optim;
mod stdl;

pub use bptt::{bptt_backward, bptt_grads};
pub use stdl::{sltt_grads, stdl_grads, AuxNet};

use alloc::vec::Vec;

use crate::aux::{plan_scopes, AuxOptions, ScopePlan};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ledger::MemoryLedger;
use crate::network::{mean_logits, Grads, Network, NetworkSpec};
use crate::partition::PartitionBudget;
use crate::rng::{streams, Rng};
use crate::tensor::{Scalar, Tensor};

use optim::{sgd_update, SgdConfig, Velocity};

/// Loss and gradients of one minibatch.
#[derive(Debug, Clone)]
pub struct GradOutput<F> {
    /// Summed per-step loss at the real classifier.
    pub loss: f64,
    /// Summed per-step loss of every scope (a single entry for BPTT).
    pub local_losses: Vec<f64>,
    pub grads: Grads<F>,
    /// One entry per auxiliary network.
    pub aux_grads: Vec<Grads<F>>,
    /// Classifier logits averaged over steps.
    pub mean_logits: Tensor<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Regime {
    Bptt,
    Sltt,
    Stdl,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Bptt => "bptt",
            Regime::Sltt => "sltt",
            Regime::Stdl => "stdl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bptt" => Some(Regime::Bptt),
            "sltt" => Some(Regime::Sltt),
            "stdl" => Some(Regime::Stdl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub init_gain: f64,
    /// Scope budget; required for the partitioned regime only.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub budget: Option<PartitionBudget>,
    pub allow_downsample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Bptt,
            epochs: 1,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            init_gain: crate::network::DEFAULT_INIT_GAIN,
            budget: None,
            allow_downsample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        use alloc::format;
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} not in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.regime == Regime::Stdl {
            match self.budget {
                Some(b) => b.validate()?,
                None => {
                    return Err(Error::InvalidConfig(
                        "the stdl regime needs a partition budget".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn aux_options<F: Scalar>(&self) -> AuxOptions {
        AuxOptions {
            batch: self.batch_size,
            elem_bytes: F::BYTES,
            allow_downsample: self.allow_downsample,
        }
    }
}

/// Running totals of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean per-minibatch loss at the real classifier.
    pub train_loss: f64,
    pub train_acc: f64,
    pub batches: usize,
}

fn count_correct<F: Scalar>(mean_logits: &Tensor<F>, labels: &[usize]) -> usize {
    mean_logits
        .argmax_rows()
        .unwrap()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count()
}

/// A network, its auxiliaries and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    pub cfg: TrainConfig,
    pub net: Network<F>,
    pub plan: Option<ScopePlan>,
    pub auxes: Vec<AuxNet<F>>,
    pub sgd: SgdConfig,
    velocity: Vec<Velocity<F>>,
    aux_velocity: Vec<Vec<Velocity<F>>>,
    step: usize,
}

impl<F: Scalar> Trainer<F> {
    /// Initialises weights from the run seed; `steps_per_epoch` fixes the
    /// cosine schedule length.
    pub fn new(spec: &NetworkSpec, cfg: &TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let net = Network::init(spec, &mut root.split(streams::WEIGHTS), cfg.init_gain);
        let (plan, auxes) = match cfg.regime {
            Regime::Stdl => {
                let plan = plan_scopes(spec, cfg.budget.unwrap(), &cfg.aux_options::<F>())?;
                let mut rng = root.split(streams::AUX);
                let auxes = plan
                    .auxiliaries
                    .iter()
                    .map(|a| AuxNet::init(a, &spec.neuron, &mut rng, cfg.init_gain))
                    .collect();
                (Some(plan), auxes)
            }
            _ => (None, Vec::new()),
        };
        Ok(Self::assemble(cfg, net, plan, auxes, steps_per_epoch))
    }

    /// Wraps an existing network (and auxiliaries) with fresh optimizer state.
    pub fn from_parts(
        cfg: &TrainConfig,
        net: Network<F>,
        plan: Option<ScopePlan>,
        auxes: Vec<AuxNet<F>>,
        steps_per_epoch: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::assemble(cfg, net, plan, auxes, steps_per_epoch))
    }

    fn assemble(
        cfg: &TrainConfig,
        net: Network<F>,
        plan: Option<ScopePlan>,
        auxes: Vec<AuxNet<F>>,
        steps_per_epoch: usize,
    ) -> Self {
        let velocity = net
            .layers
            .iter()
            .map(|l| Velocity::zeros_like(&l.params))
            .collect();
        let aux_velocity = auxes
            .iter()
            .map(|a| a.layers.iter().map(|l| Velocity::zeros_like(&l.params)).collect())
            .collect();
        Self {
            cfg: cfg.clone(),
            sgd: SgdConfig {
                lr: cfg.lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
                total_steps: cfg.epochs * steps_per_epoch,
            },
            net,
            plan,
            auxes,
            velocity,
            aux_velocity,
            step: 0,
        }
    }

    /// Updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Bytes of weights and optimizer state, auxiliaries included.
    pub fn static_bytes(&self) -> u64 {
        let aux_params: u64 = self
            .auxes
            .iter()
            .map(|a| crate::network::param_bytes(&a.layers))
            .sum();
        let vel: u64 = self
            .velocity
            .iter()
            .chain(self.aux_velocity.iter().flatten())
            .map(Velocity::bytes)
            .sum();
        self.net.param_bytes() + aux_params + vel
    }

    /// Gradients of one minibatch under the configured regime.
    pub fn grads(
        &self,
        x: &Tensor<F>,
        labels: &[usize],
        ledger: Option<&mut MemoryLedger>,
    ) -> Result<GradOutput<F>> {
        match self.cfg.regime {
            Regime::Bptt => bptt_grads(&self.net, x, labels, ledger),
            Regime::Sltt => sltt_grads(&self.net, x, labels, ledger),
            Regime::Stdl => {
                let plan = self.plan.as_ref().unwrap();
                stdl_grads(
                    &self.net,
                    &plan.partition.boundaries,
                    &self.auxes,
                    x,
                    labels,
                    ledger,
                )
            }
        }
    }

    /// One optimizer update on a minibatch; returns the loss and the number
    /// of correct predictions.
    pub fn train_batch(
        &mut self,
        x: &Tensor<F>,
        labels: &[usize],
        ledger: Option<&mut MemoryLedger>,
    ) -> Result<(f64, usize)> {
        let out = self.grads(x, labels, ledger)?;
        for ((layer, g), v) in self
            .net
            .layers
            .iter_mut()
            .zip(&out.grads)
            .zip(&mut self.velocity)
        {
            sgd_update(&mut layer.params, g, v, &self.sgd, self.step)?;
        }
        for ((aux, ag), av) in self
            .auxes
            .iter_mut()
            .zip(&out.aux_grads)
            .zip(&mut self.aux_velocity)
        {
            for ((layer, g), v) in aux.layers.iter_mut().zip(ag).zip(av) {
                sgd_update(&mut layer.params, g, v, &self.sgd, self.step)?;
            }
        }
        self.step += 1;
        Ok((out.loss, count_correct(&out.mean_logits, labels)))
    }

    /// One pass over `data` in the seeded order of epoch `epoch`.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        epoch: usize,
        mut ledger: Option<&mut MemoryLedger>,
    ) -> Result<EpochStats> {
        let order = data.epoch_order(self.cfg.seed, epoch as u64);
        let mut loss = 0.0;
        let mut correct = 0;
        let mut batches = 0;
        for idx in order.chunks(self.cfg.batch_size) {
            let (x, y) = data.batch::<F>(idx);
            let (l, c) = self.train_batch(&x, &y, ledger.as_deref_mut())?;
            loss += l;
            correct += c;
            batches += 1;
        }
        Ok(EpochStats {
            train_loss: loss / batches.max(1) as f64,
            train_acc: correct as f64 / data.len().max(1) as f64,
            batches,
        })
    }
}

/// Steps per epoch for a dataset of `n` samples.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// Predicted classes (argmax of step-averaged logits) for every sample.
pub fn predict<F: Scalar>(net: &Network<F>, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = data.batch::<F>(chunk);
        out.extend(mean_logits(net, &x)?.argmax_rows()?);
    }
    Ok(out)
}

/// Fraction of correctly classified samples.
pub fn evaluate<F: Scalar>(net: &Network<F>, data: &Dataset, batch_size: usize) -> Result<f64> {
    let pred = predict(net, data, batch_size)?;
    let correct = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / data.len().max(1) as f64)
}
