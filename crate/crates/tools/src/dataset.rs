//! Dataset files on disk.

use std::path::{Path, PathBuf};

use snn_core::data::{Dataset, IdxImages, IdxLabels};

use crate::error::{io_err, Result, ToolError};

/// Environment variable naming the dataset root when no flag is given.
pub const DATA_ROOT_ENV: &str = "SNN_DATA_ROOT";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

fn in_file(path: &Path, e: snn_core::Error) -> ToolError {
    ToolError::Parse {
        path: path.to_path_buf(),
        line: None,
        column: None,
        message: e.to_string(),
    }
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    IdxImages::parse(&read(path)?).map_err(|e| in_file(path, e))
}

pub fn load_idx_labels(path: &Path) -> Result<IdxLabels> {
    IdxLabels::parse(&read(path)?).map_err(|e| in_file(path, e))
}

/// Image and label files as a dataset with pixels scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let img = load_idx_images(images)?;
    let lab = load_idx_labels(labels)?;
    Ok(Dataset::from_idx(&img, &lab, classes)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One split of an MNIST-layout directory (Fashion-MNIST uses the same
/// file names).
pub fn load_split(root: &Path, split: Split, classes: usize) -> Result<Dataset> {
    let (i, l) = match split {
        Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
        Split::Test => (TEST_IMAGES, TEST_LABELS),
    };
    load_idx(&root.join(i), &root.join(l), classes)
}

/// Dataset root: the explicit value if any, else the environment variable.
pub fn resolve_root(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) => Ok(PathBuf::from(v)),
        None => Err(ToolError::Usage(format!(
            "no dataset root: pass --data-root or set {DATA_ROOT_ENV}"
        ))),
    }
}
