mod support;

use support::{configs, golden, train, unstable_files};

#[test]
fn same_seed_reproduces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("blobs_stdl.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = train(&["-c", cfg, "-o", a.to_str().unwrap()]);
    let rb = train(&["-c", cfg, "-o", b.to_str().unwrap()]);
    assert_eq!(ra.final_test_acc, rb.final_test_acc);
    let bad = unstable_files(&a, &b, Some(&golden().join("blobs_stdl")));
    assert!(bad.is_empty(), "differ: {bad:?}");
}

#[test]
fn another_seed_changes_the_weights_but_not_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("blobs_stdl.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&["-c", cfg, "-o", a.to_str().unwrap()]);
    train(&["-c", cfg, "-o", b.to_str().unwrap(), "--seed", "4"]);
    let bad = unstable_files(&a, &b, None);
    assert!(bad.contains(&"checkpoint.json".to_string()), "{bad:?}");
    assert!(!bad.contains(&"trace.csv".to_string()), "{bad:?}");
}
