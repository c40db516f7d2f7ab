//! Budgeted construction of auxiliary heads.
//!
//! The auxiliary network of subnetwork `k` is an order-preserving selection
//! of the layers after it (classifier excluded, pooling skipped) followed by
//! a fresh classifier. Among selections that fit the budget the builder
//! takes the deepest one, then the one with the largest output-channel sum,
//! then the lexicographically earliest.
//!
//! Skipping layers breaks the shape chain. Between consecutive selections
//! (and after the scope output) shapes are re-stitched by the cheapest of:
//! nothing (shapes agree), an average pool (same channels, integer spatial
//! ratio), a 1x1 projection conv or a dense projection for flat targets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerSpec, NetworkSpec};
use crate::neuron::NeuronConfig;
use crate::partition::{greedy_partition, Partition, PartitionBudget};

/// Largest candidate count accepted by [`enumerate_candidates`].
pub const ENUMERATION_MAX_LAYERS: usize = 16;

/// Pooling factors tried, in order, when downsampling is allowed.
pub const DOWNSAMPLE_FACTORS: [usize; 5] = [1, 2, 4, 8, 16];

/// Footprint model of a set of candidate layers.
pub trait SubsetCosts {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width score of candidate `i`.
    fn width(&self, i: usize) -> u64;

    /// Bytes added by placing `next` right after `prev` (`None` is the
    /// auxiliary input), including any adapter; `None` if they cannot be
    /// chained.
    fn step(&self, prev: Option<usize>, next: usize) -> Option<u64>;

    /// Bytes of the classifier head after `last`.
    fn head(&self, last: Option<usize>) -> Option<u64>;
}

/// Footprints that simply add up, with a fixed head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdditiveCosts {
    pub footprints: Vec<u64>,
    pub widths: Vec<u64>,
    pub head: u64,
}

impl SubsetCosts for AdditiveCosts {
    fn len(&self) -> usize {
        self.footprints.len()
    }

    fn width(&self, i: usize) -> u64 {
        self.widths[i]
    }

    fn step(&self, _prev: Option<usize>, next: usize) -> Option<u64> {
        Some(self.footprints[next])
    }

    fn head(&self, _last: Option<usize>) -> Option<u64> {
        Some(self.head)
    }
}

/// A scored selection of candidate indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub subset: Vec<usize>,
    pub depth: usize,
    pub width: u64,
    pub cost: u64,
}

/// Total bytes of `subset` (ascending candidate indices) plus head.
pub fn subset_cost<C: SubsetCosts + ?Sized>(costs: &C, subset: &[usize]) -> Option<u64> {
    let mut total = 0u64;
    let mut prev = None;
    for &j in subset {
        total = total.checked_add(costs.step(prev, j)?)?;
        prev = Some(j);
    }
    total.checked_add(costs.head(prev)?)
}

/// Every order-preserving subset that fits `budget`, in mask order.
pub fn enumerate_candidates<C: SubsetCosts + ?Sized>(
    costs: &C,
    budget: u64,
) -> Result<Vec<Candidate>> {
    let n = costs.len();
    if n > ENUMERATION_MAX_LAYERS {
        return Err(Error::SizeGuard {
            len: n,
            max: ENUMERATION_MAX_LAYERS,
        });
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if let Some(cost) = subset_cost(costs, &subset) {
            if cost <= budget {
                out.push(Candidate {
                    depth: subset.len(),
                    width: subset.iter().map(|&i| costs.width(i)).sum(),
                    subset,
                    cost,
                });
            }
        }
    }
    Ok(out)
}

fn add(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    a?.checked_add(b?)
}

fn min_opt(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Deepest, then widest, then lexicographically earliest subset fitting
/// `budget`. `None` when not even the bare head fits.
pub fn select_subset<C: SubsetCosts + ?Sized>(costs: &C, budget: u64) -> Option<Candidate> {
    let n = costs.len();
    // slot 0 is the auxiliary input, slot i + 1 is candidate i
    let step = |prev: usize, next: usize| costs.step(prev.checked_sub(1), next);
    let head = |prev: usize| costs.head(prev.checked_sub(1));

    // rest[r][p]: cheapest way to add r more layers after slot p, then head.
    let mut rest: Vec<Vec<Option<u64>>> = vec![(0..=n).map(head).collect()];
    for r in 1..=n {
        let row = (0..=n)
            .map(|p| {
                let first = p; // next candidate index must be >= p
                (first..n).fold(None, |best, j| {
                    min_opt(best, add(step(p, j), rest[r - 1][j + 1]))
                })
            })
            .collect();
        rest.push(row);
    }
    let depth = (0..=n)
        .rev()
        .find(|&d| rest[d][0].is_some_and(|c| c <= budget))?;

    let widths: Vec<u64> = (0..n).map(|i| costs.width(i)).collect();
    let mut search = Search {
        costs,
        budget,
        depth,
        rest: &rest,
        widths: &widths,
        path: Vec::with_capacity(depth),
        best: None,
    };
    search.dfs(0, 0, 0);
    search.best
}

struct Search<'a, C: ?Sized> {
    costs: &'a C,
    budget: u64,
    depth: usize,
    rest: &'a [Vec<Option<u64>>],
    widths: &'a [u64],
    path: Vec<usize>,
    best: Option<Candidate>,
}

impl<C: SubsetCosts + ?Sized> Search<'_, C> {
    fn upper_bound(&self, from: usize, r: usize) -> u64 {
        let mut w: Vec<u64> = self.widths[from..].to_vec();
        w.sort_unstable_by(|a, b| b.cmp(a));
        w.iter().take(r).sum()
    }

    /// `slot` is 0 for the auxiliary input or `i + 1` after candidate `i`.
    fn dfs(&mut self, slot: usize, cost: u64, width: u64) {
        let placed = self.path.len();
        if placed == self.depth {
            let total = add(Some(cost), self.costs.head(slot.checked_sub(1)));
            if total.is_some_and(|c| c <= self.budget)
                && self.best.as_ref().is_none_or(|b| width > b.width)
            {
                self.best = Some(Candidate {
                    subset: self.path.clone(),
                    depth: self.depth,
                    width,
                    cost: total.unwrap(),
                });
            }
            return;
        }
        let remaining = self.depth - placed;
        for j in slot..self.widths.len() {
            if self.widths.len() - j < remaining {
                break;
            }
            let Some(c) = add(Some(cost), self.costs.step(slot.checked_sub(1), j)) else {
                continue;
            };
            if add(Some(c), self.rest[remaining - 1][j + 1]).is_none_or(|t| t > self.budget) {
                continue;
            }
            let w = width + self.widths[j];
            if let Some(b) = &self.best {
                if w + self.upper_bound(j + 1, remaining - 1) <= b.width {
                    continue;
                }
            }
            self.path.push(j);
            self.dfs(j + 1, c, w);
            self.path.pop();
        }
    }
}

/// Reference batch and element width the footprints are computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuxOptions {
    pub batch: usize,
    pub elem_bytes: usize,
    /// Try pooling prefixes when no layer fits at full resolution.
    pub allow_downsample: bool,
}

impl Default for AuxOptions {
    fn default() -> Self {
        Self {
            batch: 1,
            elem_bytes: 8,
            allow_downsample: true,
        }
    }
}

/// Auxiliary network of one subnetwork.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuxiliarySpec {
    /// 1-based subnetwork index.
    pub owner: usize,
    /// Per-sample shape of the owner's output.
    pub input_shape: Vec<usize>,
    /// Pooling factor of the prefix, 1 if none.
    pub downsample: usize,
    /// 1-based indices of the reused main-network layers.
    pub selected: Vec<usize>,
    /// Materialised chain: prefix pool, adapters, selected layers, head.
    pub layers: Vec<LayerSpec>,
    /// For each entry of `layers`, the main-network layer it copies.
    pub origin: Vec<Option<usize>>,
    /// Cached bytes per step at the reference batch.
    pub footprint: u64,
}

impl AuxiliarySpec {
    pub fn depth(&self) -> usize {
        self.selected.len()
    }

    pub fn width(&self) -> u64 {
        self.layers
            .iter()
            .zip(&self.origin)
            .filter(|(_, o)| o.is_some())
            .map(|(l, _)| l.channels as u64)
            .sum()
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }
}

fn spatial(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Layer turning `cur` into `target`: `Ok(None)` when they already agree.
fn adapter(cur: &[usize], target: &[usize]) -> Option<Option<LayerKind>> {
    if cur == target {
        return Some(None);
    }
    match (spatial(cur), spatial(target)) {
        (Some((c, h, w)), Some((tc, th, tw))) => {
            if c == tc && h % th == 0 && w % tw == 0 && h / th == w / tw {
                let r = h / th;
                return Some(Some(LayerKind::AvgPool {
                    kernel: r,
                    stride: r,
                }));
            }
            // 1x1 stride-r projection: out = (h - 1) / r + 1
            (1..=h.max(w))
                .find(|&r| (h - 1) / r + 1 == th && (w - 1) / r + 1 == tw)
                .map(|r| {
                    Some(LayerKind::ProjConv {
                        channels: tc,
                        stride: r,
                    })
                })
        }
        (_, None) if target.len() == 1 => {
            if numel(cur) == target[0] {
                Some(None)
            } else {
                Some(Some(LayerKind::ProjLinear {
                    features: target[0],
                }))
            }
        }
        _ => None,
    }
}

fn scaled(shape: &[usize], f: usize) -> Option<Vec<usize>> {
    match spatial(shape) {
        Some((c, h, w)) if f > 1 => (h % f == 0 && w % f == 0).then(|| vec![c, h / f, w / f]),
        _ => Some(shape.to_vec()),
    }
}

/// Footprints of candidate chains of a concrete network.
#[derive(Debug, Clone)]
pub struct ChainCosts {
    neuron: NeuronConfig,
    batch: usize,
    elem_bytes: usize,
    classes: usize,
    start: Vec<usize>,
    /// 1-based main-network index of each candidate.
    origin: Vec<usize>,
    /// Candidate specs re-derived at the chosen resolution.
    specs: Vec<Option<LayerSpec>>,
}

impl ChainCosts {
    /// Candidates after subnetwork closing at `boundary` (1-based), with a
    /// pooling prefix of factor `factor`.
    pub fn new(
        net: &NetworkSpec,
        boundary: usize,
        factor: usize,
        opts: &AuxOptions,
    ) -> Result<Self> {
        let out = &net.layers[boundary - 1].out_shape;
        let start = match spatial(out) {
            Some((_, h, w)) if factor > 1 => {
                if h % factor != 0 {
                    return Err(Error::IndivisibleExtent {
                        extent: h,
                        factor,
                    });
                }
                if w % factor != 0 {
                    return Err(Error::IndivisibleExtent {
                        extent: w,
                        factor,
                    });
                }
                scaled(out, factor).unwrap()
            }
            None if factor > 1 => {
                return Err(Error::IndivisibleExtent {
                    extent: numel(out),
                    factor,
                })
            }
            _ => out.clone(),
        };
        let mut origin = Vec::new();
        let mut specs = Vec::new();
        for (i, l) in net.layers.iter().enumerate().skip(boundary) {
            if l.is_classifier() || matches!(l.kind, LayerKind::AvgPool { .. }) {
                continue;
            }
            origin.push(i + 1);
            specs.push(scaled(&l.in_shape, factor).and_then(|s| LayerSpec::new(l.kind, &s).ok()));
        }
        Ok(Self {
            neuron: net.neuron,
            batch: opts.batch,
            elem_bytes: opts.elem_bytes,
            classes: net.num_classes,
            start,
            origin,
            specs,
        })
    }

    fn bytes(&self, spec: &LayerSpec) -> u64 {
        spec.footprint(&self.neuron, self.batch, self.elem_bytes)
    }

    fn shape_after(&self, prev: Option<usize>) -> Option<&[usize]> {
        match prev {
            None => Some(&self.start),
            Some(i) => self.specs[i].as_ref().map(|s| s.out_shape.as_slice()),
        }
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }
}

impl SubsetCosts for ChainCosts {
    fn len(&self) -> usize {
        self.specs.len()
    }

    fn width(&self, i: usize) -> u64 {
        self.specs[i].as_ref().map_or(0, |s| s.channels as u64)
    }

    fn step(&self, prev: Option<usize>, next: usize) -> Option<u64> {
        let cur = self.shape_after(prev)?;
        let spec = self.specs[next].as_ref()?;
        let fix = match adapter(cur, &spec.in_shape)? {
            None => 0,
            Some(kind) => self.bytes(&LayerSpec::new(kind, cur).ok()?),
        };
        Some(fix + self.bytes(spec))
    }

    fn head(&self, last: Option<usize>) -> Option<u64> {
        let cur = self.shape_after(last)?;
        let head = LayerSpec::new(
            LayerKind::Classifier {
                classes: self.classes,
            },
            cur,
        )
        .ok()?;
        Some(self.bytes(&head))
    }
}

/// Builds the concrete layer chain for candidate indices `subset` of `costs`.
pub fn materialize(
    costs: &ChainCosts,
    owner: usize,
    input_shape: &[usize],
    factor: usize,
    subset: &[usize],
) -> Result<AuxiliarySpec> {
    let mut layers = Vec::new();
    let mut origin = Vec::new();
    let mut cur = input_shape.to_vec();
    if factor > 1 {
        let pool = LayerSpec::new(
            LayerKind::AvgPool {
                kernel: factor,
                stride: factor,
            },
            &cur,
        )?;
        cur = pool.out_shape.clone();
        layers.push(pool);
        origin.push(None);
    }
    for &j in subset {
        let target = costs.specs[j].as_ref().ok_or_else(|| {
            Error::InvalidNetwork(alloc::format!(
                "layer {} has no valid shape at downsample factor {factor}",
                costs.origin[j]
            ))
        })?;
        let fix = adapter(&cur, &target.in_shape).ok_or_else(|| {
            Error::InvalidNetwork(alloc::format!(
                "cannot adapt shape {:?} to {:?}",
                cur,
                target.in_shape
            ))
        })?;
        if let Some(kind) = fix {
            let a = LayerSpec::new(kind, &cur)?;
            layers.push(a);
            origin.push(None);
        }
        let l = LayerSpec::new(target.kind, &target.in_shape)?;
        cur = l.out_shape.clone();
        layers.push(l);
        origin.push(Some(costs.origin[j]));
    }
    layers.push(LayerSpec::new(
        LayerKind::Classifier {
            classes: costs.classes,
        },
        &cur,
    )?);
    origin.push(None);
    let footprint = layers.iter().map(|l| costs.bytes(l)).sum();
    Ok(AuxiliarySpec {
        owner,
        input_shape: input_shape.to_vec(),
        downsample: factor,
        selected: subset.iter().map(|&j| costs.origin[j]).collect(),
        layers,
        origin,
        footprint,
    })
}

/// Auxiliary network of subnetwork `k` (1-based, `k < K`) under `budget`.
pub fn build_auxiliary(
    net: &NetworkSpec,
    partition: &Partition,
    k: usize,
    budget: u64,
    opts: &AuxOptions,
) -> Result<AuxiliarySpec> {
    if k == 0 || k >= partition.k() {
        return Err(Error::InvalidConfig(alloc::format!(
            "subnetwork {k} has no auxiliary network (K = {})",
            partition.k()
        )));
    }
    let boundary = partition.boundaries[k - 1];
    let input = net.layers[boundary - 1].out_shape.clone();
    let factors: &[usize] = if opts.allow_downsample {
        &DOWNSAMPLE_FACTORS
    } else {
        &DOWNSAMPLE_FACTORS[..1]
    };
    let mut head_only: Option<(ChainCosts, usize)> = None;
    for &f in factors {
        let Ok(costs) = ChainCosts::new(net, boundary, f, opts) else {
            continue;
        };
        match select_subset(&costs, budget) {
            Some(c) if c.depth > 0 => return materialize(&costs, k, &input, f, &c.subset),
            Some(_) if head_only.is_none() => head_only = Some((costs, f)),
            _ => {}
        }
    }
    match head_only {
        Some((costs, f)) => materialize(&costs, k, &input, f, &[]),
        None => {
            let needed = ChainCosts::new(net, boundary, 1, opts)?
                .head(None)
                .unwrap_or(u64::MAX);
            Err(Error::BudgetTooSmall {
                owner: k,
                needed,
                budget,
            })
        }
    }
}

/// Same auxiliary selection re-derived behind a pooling prefix of `factor`.
pub fn attach_downsample(
    net: &NetworkSpec,
    boundary: usize,
    aux: &AuxiliarySpec,
    factor: usize,
    opts: &AuxOptions,
) -> Result<AuxiliarySpec> {
    let costs = ChainCosts::new(net, boundary, factor, opts)?;
    let subset: Vec<usize> = aux
        .selected
        .iter()
        .map(|s| {
            costs.origin.iter().position(|o| o == s).ok_or_else(|| {
                Error::InvalidNetwork(alloc::format!("layer {s} is not a candidate"))
            })
        })
        .collect::<Result<_>>()?;
    materialize(&costs, aux.owner, &aux.input_shape, factor, &subset)
}

/// Bytes set aside for auxiliaries before partitioning in ratio mode: the
/// cheapest single reusable layer together with a head on its output.
pub fn aux_reserve(net: &NetworkSpec, opts: &AuxOptions) -> u64 {
    let head = |shape: &[usize]| {
        LayerSpec::new(
            LayerKind::Classifier {
                classes: net.num_classes,
            },
            shape,
        )
        .map(|h| h.footprint(&net.neuron, opts.batch, opts.elem_bytes))
        .unwrap_or(u64::MAX)
    };
    let last = net.layers.len() - 1;
    let with_layer = (1..last)
        .filter(|&i| !matches!(net.layers[i].kind, LayerKind::AvgPool { .. }))
        .map(|i| {
            let l = &net.layers[i];
            l.footprint(&net.neuron, opts.batch, opts.elem_bytes)
                .saturating_add(head(&l.out_shape))
        })
        .min();
    with_layer.unwrap_or_else(|| {
        (0..last)
            .map(|i| head(&net.layers[i].out_shape))
            .min()
            .unwrap_or(0)
    })
}

/// Partition plus auxiliaries for partitioned training.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScopePlan {
    pub partition: Partition,
    pub auxiliaries: Vec<AuxiliarySpec>,
    /// Bound on any scope's cached bytes (subnetwork plus auxiliary).
    pub scope_limit: u64,
    pub reserve: u64,
}

impl ScopePlan {
    /// Bytes of scope `k` (1-based) including its auxiliary.
    pub fn scope_footprint(&self, k: usize) -> u64 {
        self.partition.footprints[k - 1]
            + self.auxiliaries.get(k - 1).map_or(0, |a| a.footprint)
    }

    pub fn max_scope_footprint(&self) -> u64 {
        (1..=self.partition.k())
            .map(|k| self.scope_footprint(k))
            .max()
            .unwrap_or(0)
    }
}

/// Partitions `net` and builds every auxiliary.
///
/// Absolute budgets bound each subnetwork and each auxiliary separately.
/// Ratio budgets bound subnetwork plus auxiliary together: the reserve from
/// [`aux_reserve`] is taken off before partitioning and each auxiliary gets
/// what its subnetwork leaves.
pub fn plan_scopes(net: &NetworkSpec, budget: PartitionBudget, opts: &AuxOptions) -> Result<ScopePlan> {
    budget.validate()?;
    let fps = net.footprints(opts.batch, opts.elem_bytes);
    let total: u64 = fps.iter().sum();
    let resolved = budget.resolve(total);
    let (sub_budget, reserve, scope_limit) = match budget {
        PartitionBudget::AbsoluteBytes { bytes } => (bytes, 0, bytes.saturating_mul(2)),
        PartitionBudget::Ratio { .. } => {
            let reserve = aux_reserve(net, opts);
            if resolved <= reserve {
                return Err(Error::BudgetTooSmall {
                    owner: 0,
                    needed: reserve,
                    budget: resolved,
                });
            }
            (resolved - reserve, reserve, resolved)
        }
    };
    let partition = greedy_partition(&fps, sub_budget)?;
    let mut auxiliaries = Vec::with_capacity(partition.k().saturating_sub(1));
    for k in 1..partition.k() {
        let aux_budget = match budget {
            PartitionBudget::AbsoluteBytes { bytes } => bytes,
            PartitionBudget::Ratio { .. } => resolved - partition.footprints[k - 1],
        };
        auxiliaries.push(build_auxiliary(net, &partition, k, aux_budget, opts)?);
    }
    Ok(ScopePlan {
        partition,
        auxiliaries,
        scope_limit,
        reserve,
    })
}
