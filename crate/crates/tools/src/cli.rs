//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snn_core::partition::PartitionBudget;
use snn_core::train::Regime;

use crate::config::{DatasetConfig, Precision, RunConfig};
use crate::error::{Result, ToolError};

#[derive(Debug, Parser)]
#[command(name = "snn", version, about = "Train and inspect spiking networks under memory budgets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a network (or a footprint list) into subnetworks under a budget
    Partition(PartitionArgs),
    /// Train a network and write metrics, trace and checkpoint
    Train(TrainArgs),
    /// Compare engine gradients against the reference oracles
    Gradcheck(GradcheckArgs),
    /// Record the cached-activation trace of one minibatch
    Trace(TraceArgs),
    /// Linear probe accuracy of every layer of a checkpoint
    Probe(ProbeArgs),
    /// Linear CKA between layers of one or two checkpoints
    Cka(CkaArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Bptt,
    Sltt,
    Stdl,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Bptt => Regime::Bptt,
            RegimeArg::Sltt => Regime::Sltt,
            RegimeArg::Stdl => Regime::Stdl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct BudgetArgs {
    /// Per-subnetwork budget in bytes
    #[arg(long, conflicts_with = "budget_ratio")]
    pub budget_bytes: Option<u64>,
    /// Per-scope budget as a fraction of the network's per-step footprint
    #[arg(long)]
    pub budget_ratio: Option<f64>,
}

impl BudgetArgs {
    pub fn budget(&self) -> Option<PartitionBudget> {
        match (self.budget_bytes, self.budget_ratio) {
            (Some(bytes), _) => Some(PartitionBudget::AbsoluteBytes { bytes }),
            (None, Some(rho)) => Some(PartitionBudget::Ratio { rho }),
            _ => None,
        }
    }
}

/// Options shared by every command that runs a network.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Run configuration file (TOML); flags override it
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Network description file
    #[arg(long, short)]
    pub network: Option<PathBuf>,
    /// Directory holding the IDX files (default: $SNN_DATA_ROOT)
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Output directory
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
    /// Use only the first N training samples
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test samples
    #[arg(long)]
    pub test_limit: Option<usize>,
}

impl RunArgs {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(n) = &self.network {
            cfg.network = Some(n.clone());
        }
        if let Some(o) = &self.output {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(p) = self.precision {
            cfg.precision = p.into();
        }
        if let Some(t) = self.timesteps {
            cfg.timesteps = Some(t);
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.probe.seed = s;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(b) = self.eval_batch {
            cfg.eval_batch = b;
        }
        let wants_idx = self.data_root.is_some() || self.train_limit.is_some() || self.test_limit.is_some();
        match &mut cfg.dataset {
            DatasetConfig::Idx {
                root,
                train_limit,
                test_limit,
                ..
            } => {
                if let Some(r) = &self.data_root {
                    *root = Some(r.clone());
                }
                if self.train_limit.is_some() {
                    *train_limit = self.train_limit;
                }
                if self.test_limit.is_some() {
                    *test_limit = self.test_limit;
                }
            }
            DatasetConfig::Blobs { .. } if wants_idx => {
                return Err(ToolError::Usage(
                    "--data-root and sample limits apply to idx datasets only".into(),
                ))
            }
            DatasetConfig::Blobs { .. } => {}
        }
        if cfg.eval_batch == 0 {
            return Err(ToolError::Usage("eval batch must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated per-layer footprints instead of a network file
    #[arg(long, value_delimiter = ',', conflicts_with = "network")]
    pub footprints: Option<Vec<u64>>,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Never prefix auxiliary networks with pooling
    #[arg(long)]
    pub no_downsample: bool,
    #[command(flatten)]
    pub budget: BudgetArgs,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = self.run.resolve()?;
        if let Some(r) = self.regime {
            cfg.train.regime = r.into();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
        if let Some(m) = self.momentum {
            cfg.train.momentum = m;
        }
        if let Some(w) = self.weight_decay {
            cfg.train.weight_decay = w;
        }
        if self.no_downsample {
            cfg.train.allow_downsample = false;
        }
        if let Some(b) = self.budget.budget() {
            cfg.train.budget = Some(b);
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// First case seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random tiny networks per suite
    #[arg(long, default_value_t = 60)]
    pub cases: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Probe training epochs
    #[arg(long)]
    pub probe_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct CkaArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint; without it every layer pair of the first is compared
    #[arg(long)]
    pub against: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nepochs = 3\nlr = 0.5\nseed = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "snn", "train", "--config", path.to_str().unwrap(), "--epochs", "9", "--seed", "2",
        ])
        .unwrap();
        let Command::Train(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.lr, cfg.train.seed), (9, 0.5, 2));
    }
}
