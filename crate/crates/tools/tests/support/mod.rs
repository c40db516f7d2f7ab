//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use snn_tools::cli::Cli;
use snn_tools::commands::{cmd_train, TrainOutcome};
use clap::Parser;

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Files every training run writes, compared byte for byte.
pub const STABLE_FILES: [&str; 7] = [
    "config.toml",
    "network.toml",
    "manifest.json",
    "trace.csv",
    "peak_by_layer.csv",
    "peak_by_step.csv",
    "checkpoint.json",
];

/// Trains through the same entry point as `snn train`.
pub fn train(args: &[&str]) -> TrainOutcome {
    let mut argv = vec!["snn", "train"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{e}"));
    let snn_tools::cli::Command::Train(a) = cli.command else {
        unreachable!()
    };
    cmd_train(&a, &mut std::io::sink()).unwrap_or_else(|e| panic!("{e}"))
}

/// Metrics with the wall-clock column dropped.
pub fn metrics_without_time(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    text.lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

/// Names of the files that differ between two run directories, plus the
/// golden files that differ from the first run.
pub fn unstable_files(a: &Path, b: &Path, golden: Option<&Path>) -> Vec<String> {
    let mut bad = Vec::new();
    for f in STABLE_FILES {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            bad.push(f.to_string());
        }
    }
    if metrics_without_time(a) != metrics_without_time(b) {
        bad.push("metrics.csv".into());
    }
    if let Some(g) = golden {
        for entry in std::fs::read_dir(g).unwrap() {
            let p = entry.unwrap().path();
            let name = p.file_name().unwrap().to_str().unwrap().to_string();
            if std::fs::read(&p).unwrap() != std::fs::read(a.join(&name)).unwrap() {
                bad.push(format!("golden/{name}"));
            }
        }
    }
    bad
}
