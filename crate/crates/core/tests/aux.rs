use proptest::prelude::*;

use snn_core::aux::{
    build_auxiliary, enumerate_candidates, plan_scopes, select_subset, subset_cost,
    AdditiveCosts, AuxOptions, Candidate, ChainCosts, SubsetCosts,
};
use snn_core::network::{LayerKind, NetworkSpec};
use snn_core::neuron::NeuronConfig;
use snn_core::partition::{Partition, PartitionBudget};
use snn_core::rng::Rng;

/// Best candidate by the stated order: depth, then width, then the
/// lexicographically smallest index list.
fn oracle_best(all: &[Candidate]) -> Option<&Candidate> {
    all.iter().max_by(|a, b| {
        (a.depth, a.width)
            .cmp(&(b.depth, b.width))
            .then_with(|| b.subset.cmp(&a.subset))
    })
}

fn random_net(rng: &mut Rng) -> NetworkSpec {
    let mut kinds = vec![LayerKind::EncodeConv {
        channels: 2 + rng.below(6),
        kernel: 3,
        stride: 1,
        padding: 1,
    }];
    let mut side = 16usize;
    let mut flat = false;
    let n = 2 + rng.below(16);
    for _ in 0..n {
        let ch = 2 + rng.below(14);
        let kind = if flat {
            LayerKind::Linear { features: 4 + rng.below(28) }
        } else {
            match rng.below(6) {
                0 | 1 => LayerKind::Conv { channels: ch, kernel: 3, stride: 1, padding: 1 },
                2 if side >= 2 => {
                    side = (side - 1) / 2 + 1;
                    LayerKind::Conv { channels: ch, kernel: 3, stride: 2, padding: 1 }
                }
                3 if side.is_multiple_of(2) && side >= 2 => {
                    side /= 2;
                    LayerKind::AvgPool { kernel: 2, stride: 2 }
                }
                4 => LayerKind::ResidualBlock { channels: ch, stride: 1 },
                5 => {
                    flat = true;
                    LayerKind::Linear { features: 4 + rng.below(28) }
                }
                _ => LayerKind::Conv { channels: ch, kernel: 1, stride: 1, padding: 0 },
            }
        };
        kinds.push(kind);
    }
    kinds.push(LayerKind::Classifier { classes: 10 });
    NetworkSpec::new(&[1, 16, 16], &kinds, 2, NeuronConfig::default()).unwrap()
}

#[test]
fn additive_instances_pick_the_enumeration_optimum() {
    let mut rng = Rng::new(3);
    for _ in 0..300 {
        let n = rng.below(17);
        let costs = AdditiveCosts {
            footprints: (0..n).map(|_| 1 + rng.below(20) as u64).collect(),
            widths: (0..n).map(|_| 1 + rng.below(5) as u64).collect(),
            head: 1 + rng.below(5) as u64,
        };
        let total: u64 = costs.footprints.iter().sum::<u64>() + costs.head;
        let budget = rng.below(total as usize + 2) as u64;
        let all = enumerate_candidates(&costs, budget).unwrap();
        let got = select_subset(&costs, budget);
        assert_eq!(got.as_ref(), oracle_best(&all), "{costs:?} budget {budget}");
    }
}

#[test]
fn network_instances_pick_the_enumeration_optimum() {
    let mut rng = Rng::new(11);
    let opts = AuxOptions { batch: 4, elem_bytes: 4, allow_downsample: false };
    let mut checked = 0;
    let mut with_depth = 0;
    while checked < 150 {
        let net = random_net(&mut rng);
        let l = net.len();
        let boundary = 1 + rng.below(l - 1);
        let costs = ChainCosts::new(&net, boundary, 1, &opts).unwrap();
        if costs.len() > 16 {
            continue;
        }
        let fps = net.footprints(opts.batch, opts.elem_bytes);
        let partition = Partition::from_boundaries(vec![boundary, l], &fps, u64::MAX);
        let head = costs.head(None).unwrap();
        let full = subset_cost(&costs, &[]).unwrap() + fps[boundary..].iter().sum::<u64>() * 2;
        let budget = head + rng.below((full - head) as usize + 1) as u64;
        let all = enumerate_candidates(&costs, budget).unwrap();
        let want = oracle_best(&all).unwrap();
        let aux = build_auxiliary(&net, &partition, 1, budget, &opts).unwrap();
        let picked: Vec<usize> = want.subset.iter().map(|&i| costs.origin()[i]).collect();
        assert_eq!(aux.selected, picked);
        assert_eq!(aux.footprint, want.cost);
        assert!(aux.footprint <= budget);
        // the materialised chain composes and its footprints add up
        let mut shape = aux.input_shape.clone();
        let mut bytes = 0;
        for layer in &aux.layers {
            assert_eq!(layer.in_shape, shape);
            shape = layer.out_shape.clone();
            bytes += layer.footprint(&net.neuron, opts.batch, opts.elem_bytes);
        }
        assert_eq!(bytes, aux.footprint);
        assert!(aux.layers.last().unwrap().is_classifier());
        checked += 1;
        with_depth += usize::from(aux.depth() > 0);
    }
    assert!(with_depth >= 50, "only {with_depth} instances reuse a layer");
}

#[test]
fn depth_is_preferred_over_width() {
    // a wide expensive layer against two cheap narrow ones
    let costs = AdditiveCosts {
        footprints: vec![10, 4, 4],
        widths: vec![100, 1, 1],
        head: 1,
    };
    let c = select_subset(&costs, 10).unwrap();
    assert_eq!(c.subset, vec![1, 2]);
    // {0, 1} would be far wider, but {0, 1, 2} is deeper
    let c = select_subset(&costs, 19).unwrap();
    assert_eq!(c.subset, vec![0, 1, 2]);
    let c = select_subset(&costs, 18).unwrap();
    assert_eq!(c.subset, vec![0, 1]);
}

#[test]
fn downsampling_rescues_a_tight_budget() {
    let net = NetworkSpec::new(
        &[1, 16, 16],
        &[
            LayerKind::EncodeConv { channels: 8, kernel: 3, stride: 1, padding: 1 },
            LayerKind::Conv { channels: 8, kernel: 3, stride: 1, padding: 1 },
            LayerKind::Classifier { classes: 10 },
        ],
        2,
        NeuronConfig::default(),
    )
    .unwrap();
    let opts = AuxOptions { batch: 1, elem_bytes: 4, allow_downsample: true };
    let fps = net.footprints(1, 4);
    let partition = Partition::from_boundaries(vec![1, 3], &fps, u64::MAX);
    // the conv layer alone at full resolution costs fps[1]
    let aux = build_auxiliary(&net, &partition, 1, fps[1], &opts).unwrap();
    assert!(aux.downsample > 1);
    assert_eq!(aux.selected, vec![2]);
    assert!(aux.footprint <= fps[1]);
    let no = AuxOptions { allow_downsample: false, ..opts };
    let aux = build_auxiliary(&net, &partition, 1, fps[1], &no).unwrap();
    assert_eq!(aux.depth(), 0);
}

proptest! {
    #[test]
    fn plans_respect_their_scope_limit(seed in any::<u64>(), rho in 0.2f64..1.0) {
        let mut rng = Rng::new(seed);
        let net = random_net(&mut rng);
        let opts = AuxOptions { batch: 2, elem_bytes: 4, allow_downsample: true };
        if let Ok(plan) = plan_scopes(&net, PartitionBudget::Ratio { rho }, &opts) {
            prop_assert!(plan.max_scope_footprint() <= plan.scope_limit);
            prop_assert_eq!(plan.auxiliaries.len(), plan.partition.k() - 1);
            prop_assert_eq!(*plan.partition.boundaries.last().unwrap(), net.len());
        }
    }
}
