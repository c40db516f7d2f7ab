//! Gradient check suites: the hand-written regimes against the unrolled
//! tape, against finite differences of a relaxed model, and against each
//! other where the regimes coincide.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::aux::{build_auxiliary, AuxOptions};
use crate::error::Result;
use crate::network::{Grads, LayerKind, Network, NetworkSpec};
use crate::neuron::{NeuronConfig, NeuronModel, ResetGrad};
use crate::oracle::{self, Temporal};
use crate::partition::Partition;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{bptt_grads, sltt_grads, stdl_grads, AuxNet};

/// A small random network with one minibatch.
#[derive(Debug, Clone)]
pub struct TinyCase {
    pub net: Network<f64>,
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
}

/// Random tiny network: at most two hidden layers of at most 8 neurons plus
/// a classifier, `T <= 4`, batch `<= 3`. The neuron model, reset gradient
/// and decay are drawn too unless `neuron` is given.
///
/// Draws are repeated (a bounded number of times) until the first layer
/// receives a nonzero BPTT gradient, so that silent networks do not pass
/// checks vacuously.
pub fn tiny_case(seed: u64, neuron: Option<NeuronConfig>) -> Result<TinyCase> {
    let root = Rng::new(seed);
    let mut case = draw_case(&mut root.split(0), neuron)?;
    for attempt in 1..64 {
        let g = bptt_grads(&case.net, &case.input, &case.labels, None)?;
        if g.grads[0][0].max_abs() > REL_ERR_FLOOR {
            break;
        }
        case = draw_case(&mut root.split(attempt), neuron)?;
    }
    Ok(case)
}

fn draw_case(rng: &mut Rng, neuron: Option<NeuronConfig>) -> Result<TinyCase> {
    let neuron = neuron.unwrap_or_else(|| NeuronConfig {
        lambda: 0.1 + 0.7 * rng.uniform(),
        reset_grad: if rng.below(2) == 0 {
            ResetGrad::Detached
        } else {
            ResetGrad::Exact
        },
        model: match rng.below(3) {
            0 => NeuronModel::Lif,
            1 => NeuronModel::Plif,
            _ => NeuronModel::alif(),
        },
        ..NeuronConfig::default()
    });
    let classes = 2 + rng.below(2);
    let (input_shape, mut kinds) = if rng.below(2) == 0 {
        let c = 1 + rng.below(2);
        let mut kinds = vec![LayerKind::EncodeConv {
            channels: c,
            kernel: 2,
            stride: 1,
            padding: 0,
        }];
        match rng.below(4) {
            0 => kinds.push(LayerKind::Conv {
                channels: 1 + rng.below(2),
                kernel: 1,
                stride: 1,
                padding: 0,
            }),
            1 => kinds.push(LayerKind::AvgPool { kernel: 2, stride: 2 }),
            2 => kinds.push(LayerKind::ResidualBlock {
                channels: 1 + rng.below(2),
                stride: 1,
            }),
            _ => {}
        }
        (vec![1, 3, 3], kinds)
    } else {
        let hidden = 1 + rng.below(2);
        let kinds = (0..hidden)
            .map(|_| LayerKind::Linear {
                features: 2 + rng.below(7),
            })
            .collect();
        (vec![2 + rng.below(5)], kinds)
    };
    kinds.push(LayerKind::Classifier { classes });
    let timesteps = 1 + rng.below(4);
    let spec = NetworkSpec::new(&input_shape, &kinds, timesteps, neuron)?;
    let gain = 1.5 + 2.0 * rng.uniform();
    let net = Network::init(&spec, rng, gain);
    let batch = 1 + rng.below(3);
    let mut shape = vec![batch];
    shape.extend_from_slice(&input_shape);
    let input = rng.uniform_tensor(&shape, 0.0, 1.0);
    let labels = (0..batch).map(|_| rng.below(classes)).collect();
    Ok(TinyCase { net, input, labels })
}

/// Smallest gradient scale errors are measured against, so that rounding
/// noise on an all-zero gradient does not count as a failure.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `max |a - b| / max(max |b|, REL_ERR_FLOOR)` over all tensors.
pub fn rel_err(a: &Grads<f64>, b: &Grads<f64>) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (la, lb) in a.iter().zip(b) {
        assert_eq!(la.len(), lb.len(), "gradient layouts differ");
        for (ta, tb) in la.iter().zip(lb) {
            diff = diff.max(ta.max_abs_diff(tb).unwrap());
            scale = scale.max(tb.max_abs());
        }
    }
    diff / scale.max(REL_ERR_FLOOR)
}

fn timesteps_of(case: &TinyCase) -> usize {
    case.net.spec.timesteps
}

/// BPTT against the fully unrolled graph.
pub fn bptt_vs_tape(case: &TinyCase) -> Result<f64> {
    let got = bptt_grads(&case.net, &case.input, &case.labels, None)?;
    let (_, want) = oracle::grads(
        &case.net.layers,
        case.net.neuron(),
        timesteps_of(case),
        &case.input,
        &case.labels,
        Temporal::Full,
    )?;
    Ok(rel_err(&got.grads, &want))
}

/// Truncated online regime against the graph with previous-step state cut.
pub fn sltt_vs_tape(case: &TinyCase) -> Result<f64> {
    let got = sltt_grads(&case.net, &case.input, &case.labels, None)?;
    let (_, want) = oracle::grads(
        &case.net.layers,
        case.net.neuron(),
        timesteps_of(case),
        &case.input,
        &case.labels,
        Temporal::Truncated,
    )?;
    Ok(rel_err(&got.grads, &want))
}

/// Two scopes split after layer 1, with a full-depth auxiliary, against
/// separately built graphs of every scope.
pub fn stdl_vs_tape(case: &TinyCase, seed: u64) -> Result<f64> {
    let spec = &case.net.spec;
    let l = spec.len();
    let opts = AuxOptions::default();
    let fps = spec.footprints(opts.batch, opts.elem_bytes);
    let partition = Partition::from_boundaries(vec![1, l], &fps, u64::MAX);
    let aux_spec = build_auxiliary(spec, &partition, 1, u64::MAX / 4, &opts)?;
    let aux = AuxNet::init(&aux_spec, &spec.neuron, &mut Rng::new(seed), 1.5);
    let got = stdl_grads(
        &case.net,
        &partition.boundaries,
        core::slice::from_ref(&aux),
        &case.input,
        &case.labels,
        None,
    )?;
    let (want, want_aux) = oracle::partitioned_grads(
        &case.net.layers,
        &partition.boundaries,
        &[&aux.layers],
        &spec.neuron,
        spec.timesteps,
        &case.input,
        &case.labels,
    )?;
    let main = rel_err(&got.grads, &want);
    let aux_err = rel_err(&got.aux_grads[0], &want_aux[0]);
    Ok(main.max(aux_err))
}

/// Relaxation slope used by the finite-difference check.
pub const RELAXED_SLOPE: f64 = 4.0;

/// BPTT on the sigmoid-relaxed model with the exact reset gradient against
/// central differences of its loss.
pub fn bptt_vs_finite_differences(case: &TinyCase, h: f64) -> Result<f64> {
    let neuron = NeuronConfig {
        relaxed: Some(RELAXED_SLOPE),
        reset_grad: ResetGrad::Exact,
        ..*case.net.neuron()
    };
    let spec = case.net.spec.with_neuron(neuron)?;
    let mut net = Network::from_params(&spec, case.net.layers.iter().map(|l| l.params.clone()).collect())?;
    let got = bptt_grads(&net, &case.input, &case.labels, None)?;
    let mut fd: Grads<f64> = net.zero_grads();
    // indices, not iterators: `net` is perturbed in place
    #[allow(clippy::needless_range_loop)]
    for li in 0..net.layers.len() {
        for pi in 0..net.layers[li].params.len() {
            for e in 0..net.layers[li].params[pi].len() {
                let w0 = net.layers[li].params[pi].data()[e];
                net.layers[li].params[pi].data_mut()[e] = w0 + h;
                let up = bptt_grads(&net, &case.input, &case.labels, None)?.loss;
                net.layers[li].params[pi].data_mut()[e] = w0 - h;
                let down = bptt_grads(&net, &case.input, &case.labels, None)?.loss;
                net.layers[li].params[pi].data_mut()[e] = w0;
                fd[li][pi].data_mut()[e] = (up - down) / (2.0 * h);
            }
        }
    }
    Ok(rel_err(&got.grads, &fd))
}

/// Worst excess of `|C(g + 1)| - lambda |C(g)|` over gaps `g = 1..=3`,
/// where `C(g)` is the contribution to the gradient at `m^j[T - g]`
/// routed through layer `j + 1` at step `T`; also the residual of
/// `sum_t' C = dL/dm^j[t]` at `t = 1`. The case must use detached-reset LIF
/// neurons and `T >= 5`.
pub fn truncation_decay(case: &TinyCase) -> Result<(f64, f64)> {
    let t_total = timesteps_of(case);
    let lambda = case.net.neuron().lambda;
    let inputs = vec![case.input.clone(); t_total];
    let graph = oracle::build(&case.net.layers, case.net.neuron(), &inputs, &case.labels, Temporal::Full)?;
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let mut worst: f64 = 0.0;
    let spiking: Vec<usize> = (0..case.net.layers.len() - 1)
        .filter(|&j| case.net.layers[j].spec.kind.neuron_stages() > 0)
        .collect();
    // the successor must consume the spikes through a single population:
    // pooling has none, a residual block has two
    let routed = |j: usize| {
        !graph.m[j + 1][0].is_empty() && case.net.layers[j + 1].spec.kind.neuron_stages() <= 1
    };
    for &j in spiking.iter().filter(|&&j| routed(j)) {
        let c = oracle::temporal_contributions(&graph, j, t_total);
        for g in 1..=3.min(t_total - 2) {
            let excess = norm(&c[g + 1]) - lambda * norm(&c[g]);
            worst = worst.max(excess);
        }
    }
    // completeness at t = 1
    let mut residual: f64 = 0.0;
    if let Some(&j) = spiking.iter().find(|&&j| routed(j)) {
        let full = oracle::potential_grad(&graph, j, 1);
        let mut sum = vec![0.0; full.len()];
        for tp in 1..=t_total {
            let c = oracle::temporal_contributions(&graph, j, tp);
            for (s, v) in sum.iter_mut().zip(&c[tp - 1]) {
                *s += v;
            }
        }
        let scale = norm(&full).max(f64::MIN_POSITIVE);
        let diff: Vec<f64> = sum.iter().zip(&full).map(|(a, b)| a - b).collect();
        residual = norm(&diff) / scale;
    }
    Ok((worst, residual))
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    /// Worst error observed.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn suite(name: &str, tolerance: f64, seeds: core::ops::Range<u64>, mut f: impl FnMut(u64) -> Result<f64>) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    let cases = seeds.clone().count();
    for s in seeds {
        worst = worst.max(f(s)?);
    }
    Ok(SuiteResult {
        name: name.into(),
        cases,
        worst,
        tolerance,
    })
}

/// Runs every suite over `cases` random tiny networks starting at `seed`.
pub fn run_suites(seed: u64, cases: usize) -> Result<Vec<SuiteResult>> {
    let seeds = seed..seed + cases as u64;
    let fd_cases = seed..seed + (cases as u64).min(10);
    let lif = |lambda: f64, t: usize, s: u64| -> Result<TinyCase> {
        let mut c = tiny_case(
            s,
            Some(NeuronConfig {
                lambda,
                ..NeuronConfig::default()
            }),
        )?;
        let spec = c.net.spec.with_timesteps(t)?;
        c.net = Network::from_params(&spec, c.net.layers.iter().map(|l| l.params.clone()).collect())?;
        Ok(c)
    };
    Ok(vec![
        suite("bptt_vs_tape", 1e-9, seeds.clone(), |s| bptt_vs_tape(&tiny_case(s, None)?))?,
        suite("sltt_vs_tape", 1e-9, seeds.clone(), |s| sltt_vs_tape(&tiny_case(s, None)?))?,
        suite("stdl_two_scopes_vs_tape", 1e-9, seeds.clone(), |s| {
            stdl_vs_tape(&tiny_case(s, None)?, s)
        })?,
        suite("bptt_vs_finite_differences", 1e-5, fd_cases, |s| {
            bptt_vs_finite_differences(&tiny_case(s, None)?, 1e-6)
        })?,
        suite("stdl_k1_t1_equals_bptt", 1e-12, seeds.clone(), |s| {
            let c = tiny_case(s, None)?;
            let spec = c.net.spec.with_timesteps(1)?;
            let net = Network::from_params(&spec, c.net.layers.iter().map(|l| l.params.clone()).collect())?;
            let a = stdl_grads(&net, &[net.layers.len()], &[], &c.input, &c.labels, None)?;
            let b = bptt_grads(&net, &c.input, &c.labels, None)?;
            Ok(rel_err(&a.grads, &b.grads))
        })?,
        suite("stdl_k1_lambda0_equals_bptt", 1e-10, seeds.clone(), |s| {
            let c = lif(0.0, 1 + (s as usize % 4), s)?;
            let a = stdl_grads(&c.net, &[c.net.layers.len()], &[], &c.input, &c.labels, None)?;
            let b = bptt_grads(&c.net, &c.input, &c.labels, None)?;
            Ok(rel_err(&a.grads, &b.grads))
        })?,
        suite("truncation_decay_excess", 1e-12, seeds.clone(), |s| {
            Ok(truncation_decay(&lif(0.1, 5, s)?)?.0)
        })?,
        suite("truncation_decomposition_residual", 1e-9, seeds, |s| {
            Ok(truncation_decay(&lif(0.1, 5, s)?)?.1)
        })?,
    ])
}
