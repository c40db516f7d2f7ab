use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn snn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snn"))
        .args(args)
        .output()
        .expect("spawn snn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// The JSON record printed on the last line of stderr.
fn record(o: &Output) -> Value {
    let err = stderr(o);
    serde_json::from_str(err.lines().last().expect("empty stderr")).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn partition_of_the_reference_footprints() {
    let o = snn(&["partition", "--footprints", "3,1,2,2,4", "--budget-bytes", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("P={2,4,5}\nK=3\n"), "{text}");
    assert!(text.contains("\n1,1,2,4\n2,3,4,4\n3,5,5,4\n"), "{text}");
}

#[test]
fn infeasible_partition_names_the_layer() {
    let o = snn(&["partition", "--footprints", "5,1", "--budget-bytes", "4"]);
    assert_eq!(o.status.code(), Some(4));
    let r = record(&o);
    assert_eq!(r["error"], "infeasible");
    assert_eq!(r["layer"], 1);
    assert_eq!(r["footprint"], 5);
    assert_eq!(r["budget"], 4);
}

#[test]
fn missing_network_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent-net.toml");
    let o = snn(&["partition", "-n", arg(&missing), "--budget-bytes", "1000"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent-net.toml"), "{}", stderr(&o));
    assert_eq!(record(&o)["path"], arg(&missing));
}

#[test]
fn network_partition_writes_auxiliaries() {
    let dir = tempfile::tempdir().unwrap();
    let net = configs().join("mnist_conv.toml");
    let o = snn(&[
        "partition", "-n", arg(&net), "--batch-size", "64",
        "--budget-bytes", "1204224", "-o", arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("P={1,2,3}"), "{}", stdout(&o));
    for f in ["plan.json", "aux_1.toml", "aux_2.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    // each auxiliary is itself a loadable network
    let aux = snn_tools::netfile::load_spec(&dir.path().join("aux_1.toml")).unwrap();
    assert_eq!(aux.num_classes, 10);
}

#[test]
fn gradcheck_passes_on_a_few_nets() {
    let o = snn(&["gradcheck", "--seed", "5", "--cases", "4"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("suite,cases,worst,tolerance,status\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")), "{text}");
}

#[test]
fn config_errors_give_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "precision = \"f64\"\n\n[train]\nregime = \"stdl\"\nlearning_rate = 0.1\n").unwrap();
    let o = snn(&["train", "-c", arg(&path)]);
    assert_eq!(o.status.code(), Some(2));
    let r = record(&o);
    assert_eq!(r["error"], "parse");
    assert_eq!(r["line"], 5);
    assert!(r["message"].as_str().unwrap().contains("learning_rate"), "{r}");
}

#[test]
fn missing_dataset_root_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_snn"))
        .args(["train", "-c", arg(&configs().join("mnist_bptt.toml")), "-o", arg(dir.path())])
        .env_remove("SNN_DATA_ROOT")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SNN_DATA_ROOT"), "{}", stderr(&o));
}

#[test]
fn train_then_probe_and_cka_on_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let cfg = configs().join("blobs_stdl.toml");
    let o = snn(&["train", "-c", arg(&cfg), "-o", arg(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "config.toml", "network.toml", "manifest.json", "metrics.csv",
        "trace.csv", "peak_by_layer.csv", "peak_by_step.csv", "checkpoint.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!(acc >= 0.9, "{metrics}");

    // the copied config reruns on its own
    let again = dir.path().join("again");
    let o = snn(&["train", "-c", arg(&run.join("config.toml")), "-o", arg(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(run.join("checkpoint.json")).unwrap(),
        std::fs::read(again.join("checkpoint.json")).unwrap()
    );

    let ckpt = run.join("checkpoint.json");
    let o = snn(&["probe", "-c", arg(&cfg), "--checkpoint", arg(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let probe = std::fs::read_to_string(run.join("probe.csv")).unwrap();
    let rows: Vec<&str> = probe.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "layer,kind,features,probe_acc");
    assert_eq!(rows.len(), 3);

    let o = snn(&["cka", "-c", arg(&cfg), "--checkpoint", arg(&ckpt), "--against", arg(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cka = std::fs::read_to_string(run.join("cka.csv")).unwrap();
    // a checkpoint against itself is identical at every layer
    for l in cka.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let v: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - 1.0).abs() <= 1e-9, "{l}");
    }
}
