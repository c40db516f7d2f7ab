use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: non-positive output extent")]
    NonPositiveExtent { op: &'static str },
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("layer {layer} needs {footprint} bytes but the budget is {budget}")]
    Infeasible {
        layer: usize,
        footprint: u64,
        budget: u64,
    },
    #[error("instance of size {len} exceeds the enumeration guard of {max}")]
    SizeGuard { len: usize, max: usize },
    #[error("auxiliary for subnetwork {owner} needs at least {needed} bytes, budget is {budget}")]
    BudgetTooSmall { owner: usize, needed: u64, budget: u64 },
    #[error("extent {extent} is not divisible by {factor}")]
    IndivisibleExtent { extent: usize, factor: usize },
    #[error("missing cache for layer {layer} at step {step}")]
    MissingCache { layer: usize, step: usize },
    #[error("subnetwork {0} has no auxiliary network")]
    MissingAuxiliary(usize),
    #[error("free of {bytes} bytes at ({layer}, step {step}) has no matching cache")]
    UnmatchedFree {
        layer: String,
        step: usize,
        bytes: u64,
    },
    #[error("class index {label} out of range for {classes} classes")]
    ClassOutOfRange { label: usize, classes: usize },
    #[error("bad magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    DimensionMismatch { images: usize, labels: usize },
    #[error("representation has zero variance")]
    ZeroVariance,
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub(crate) fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}
