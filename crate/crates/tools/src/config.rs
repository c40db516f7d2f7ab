//! Run configuration files.
//!
//! Relative paths inside a config file are taken relative to that file.
//! Command-line flags override whatever the file says.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snn_core::analysis::ProbeConfig;
use snn_core::data::{synth_tasks, BlobSpec, Dataset};
use snn_core::train::TrainConfig;

use crate::dataset::{load_split, resolve_root, Split};
use crate::error::{io_err, toml_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// MNIST-layout IDX files. Without a root the environment variable is
    /// consulted.
    Idx {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
        #[serde(default = "ten")]
        classes: usize,
    },
    /// Gaussian blobs; the test split is drawn from the same centres.
    Blobs {
        classes: usize,
        train_samples: usize,
        test_samples: usize,
        shape: Vec<usize>,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn ten() -> usize {
    10
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Idx {
            root: None,
            train_limit: None,
            test_limit: None,
            classes: 10,
        }
    }
}

impl DatasetConfig {
    /// Train and test splits.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Idx {
                root,
                train_limit,
                test_limit,
                classes,
            } => {
                let root = resolve_root(root.as_deref())?;
                let mut train = load_split(&root, Split::Train, *classes)?;
                let mut test = load_split(&root, Split::Test, *classes)?;
                if let Some(n) = train_limit {
                    train = train.head(*n);
                }
                if let Some(n) = test_limit {
                    test = test.head(*n);
                }
                Ok((train, test))
            }
            DatasetConfig::Blobs {
                classes,
                train_samples,
                test_samples,
                shape,
                spread,
                seed,
            } => {
                let all = synth_tasks(
                    *seed,
                    &BlobSpec {
                        classes: *classes,
                        samples: train_samples + test_samples,
                        shape: shape.clone(),
                        spread: *spread,
                    },
                )?;
                Ok(all.split_at(*train_samples))
            }
        }
    }

    /// Fixes the dataset root so the resolved config does not depend on the
    /// environment.
    pub fn pin_root(&mut self) -> Result<()> {
        if let DatasetConfig::Idx { root, .. } = self {
            *root = Some(resolve_root(root.as_deref())?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<PathBuf>,
    /// Overrides the network file's step count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<usize>,
    pub precision: Precision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Batch size for evaluation and representation extraction.
    pub eval_batch: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: None,
            timesteps: None,
            precision: Precision::F32,
            output_dir: None,
            eval_batch: 256,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_err(path, text, &e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.network);
        rebase(base, &mut cfg.output_dir);
        if let DatasetConfig::Idx { root, .. } = &mut cfg.dataset {
            rebase(base, root);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ToolError;
    use snn_core::partition::PartitionBudget;
    use snn_core::train::Regime;

    const RUN: &str = r#"
network = "nets/mnist.toml"
precision = "f64"

[dataset]
kind = "idx"
root = "/data/mnist"
train_limit = 1000

[train]
regime = "stdl"
epochs = 3
budget = { mode = "ratio", rho = 0.5 }
"#;

    #[test]
    fn parses_with_defaults_and_rebases_paths() {
        let cfg = RunConfig::parse(RUN, Path::new("/runs/a/run.toml")).unwrap();
        assert_eq!(cfg.network, Some(PathBuf::from("/runs/a/nets/mnist.toml")));
        assert_eq!(cfg.precision, Precision::F64);
        assert_eq!(cfg.train.regime, Regime::Stdl);
        assert_eq!(cfg.train.budget, Some(PartitionBudget::Ratio { rho: 0.5 }));
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(
            cfg.dataset,
            DatasetConfig::Idx {
                root: Some("/data/mnist".into()),
                train_limit: Some(1000),
                test_limit: None,
                classes: 10
            }
        );
        let again = RunConfig::parse(&cfg.to_toml(), Path::new("/elsewhere/x.toml")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_field_is_located() {
        let bad = RUN.replace("epochs = 3", "epochs = 3\nepohcs = 4");
        match RunConfig::parse(&bad, Path::new("run.toml")) {
            Err(ToolError::Parse { line, message, .. }) => {
                assert_eq!(line, Some(13));
                assert!(message.contains("epohcs"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blob_splits() {
        let d = DatasetConfig::Blobs {
            classes: 3,
            train_samples: 30,
            test_samples: 12,
            shape: vec![4],
            spread: 0.1,
            seed: 1,
        };
        let (train, test) = d.load().unwrap();
        assert_eq!((train.len(), test.len()), (30, 12));
    }
}
