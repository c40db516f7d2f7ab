use proptest::prelude::*;

use snn_core::analysis::{linear_cka, linear_probe, ProbeConfig};
use snn_core::data::{synth_tasks, BlobSpec};
use snn_core::rng::Rng;
use snn_core::Tensor;

fn blobs(seed: u64, classes: usize, samples: usize) -> (Tensor<f64>, Vec<usize>) {
    let spec = BlobSpec { classes, samples, shape: vec![8], spread: 0.05 };
    let d = synth_tasks(seed, &spec).unwrap();
    let idx: Vec<usize> = (0..d.len()).collect();
    let (x, y) = d.batch::<f64>(&idx);
    (x, y)
}

fn concat_cols(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Vec::with_capacity(n * (da + db));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
        out.extend_from_slice(&b.data()[i * db..(i + 1) * db]);
    }
    Tensor::from_vec(&[n, da + db], out).unwrap()
}

#[test]
fn independent_gaussians_are_dissimilar() {
    let mut rng = Rng::new(17);
    let x: Tensor<f64> = rng.normal_tensor(&[1000, 50], 1.0);
    let y: Tensor<f64> = rng.normal_tensor(&[1000, 50], 1.0);
    let c = linear_cka(&x, &y).unwrap();
    assert!(c < 0.2, "{c}");
}

#[test]
fn probe_separates_blobs() {
    let (x, y) = blobs(1, 3, 300);
    let (xt, yt) = blobs(1, 3, 600);
    let acc = linear_probe(&x, &y, &xt.slice_rows(300, 600).unwrap(), &yt[300..], 3, &ProbeConfig::default()).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn probe_on_permuted_labels_is_at_chance() {
    let classes = 4;
    let (x, y) = blobs(2, classes, 800);
    let mut shuffled = y.clone();
    Rng::new(5).shuffle(&mut shuffled);
    let (train_x, test_x) = (x.slice_rows(0, 400).unwrap(), x.slice_rows(400, 800).unwrap());
    let acc = linear_probe(&train_x, &shuffled[..400], &test_x, &shuffled[400..], classes, &ProbeConfig::default()).unwrap();
    let p = 1.0 / classes as f64;
    let sigma = (p * (1.0 - p) / 400.0).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "{acc}");
}

#[test]
fn probing_a_concatenation_is_not_worse() {
    let mut rng = Rng::new(8);
    let (x, y) = blobs(3, 3, 600);
    // a weak view: the blobs drowned in noise
    let noise: Tensor<f64> = rng.normal_tensor(&[600, 8], 0.6);
    let weak = x.add(&noise).unwrap();
    let cfg = ProbeConfig { epochs: 60, ..ProbeConfig::default() };
    let split = |t: &Tensor<f64>| (t.slice_rows(0, 300).unwrap(), t.slice_rows(300, 600).unwrap());
    let (wa, wb) = split(&weak);
    let both = concat_cols(&weak, &x);
    let (ba, bb) = split(&both);
    let alone = linear_probe(&wa, &y[..300], &wb, &y[300..], 3, &cfg).unwrap();
    let joint = linear_probe(&ba, &y[..300], &bb, &y[300..], 3, &cfg).unwrap();
    assert!(joint + 0.005 >= alone, "{joint} < {alone}");
}

proptest! {
    #[test]
    fn cka_is_symmetric_and_bounded(seed in any::<u64>(), n in 3usize..30, dx in 1usize..12, dy in 1usize..12) {
        let mut rng = Rng::new(seed);
        let x: Tensor<f64> = rng.normal_tensor(&[n, dx], 1.0);
        let y: Tensor<f64> = rng.uniform_tensor(&[n, dy], 0.0, 1.0);
        let a = linear_cka(&x, &y).unwrap();
        let b = linear_cka(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
