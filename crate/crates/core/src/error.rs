use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: rank must be >= 1 and every dimension positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("expected a rank-2 tensor, got shape {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Argument errors raised by the compression solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("codebook size K={k} must satisfy 1 <= K <= P={p}")]
    CodebookSize { k: usize, p: usize },
    #[error("kappa={kappa} out of range 0..={p}")]
    KappaRange { kappa: usize, p: usize },
    #[error("l1 radius must be finite and >= 0, got {0}")]
    NegativeRadius(f64),
    #[error("penalty weight must be finite and >= 0, got {0}")]
    NegativePenalty(f64),
    #[error("mu must be > 0 for penalty forms, got {0}")]
    NonPositiveMu(f64),
    #[error("rank {rank} out of range 0..={max}")]
    RankRange { rank: usize, max: usize },
    #[error("low-rank schemes need a matrix view")]
    NeedsMatrix,
    #[error("additive combination needs at least two schemes, got {0}")]
    TooFewComponents(usize),
    #[error("component shape mismatch: expected {expected} elements, got {got}")]
    ComponentShape { expected: usize, got: usize },
    #[error("input is empty")]
    Empty,
    #[error("oracle size bound exceeded: {0}")]
    OracleBound(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file: need {needed} bytes, have {have}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        have: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{classes}")]
    LabelRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LStepError {
    #[error("L step diverged: non-finite loss in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("penalty anchors do not match the parameter store: {0}")]
    AnchorMismatch(String),
    #[error("invalid L-step hyperparameter: {0}")]
    Hyper(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"LCCK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (reader supports up to {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Problems with a set of compression tasks, caught before any work is done.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("task {task}: parameter group is empty")]
    EmptyGroup { task: usize },
    #[error("task {task}: unknown parameter {name:?}")]
    UnknownParameter { task: usize, name: String },
    #[error("task {task}: parameter {name:?} listed twice")]
    DuplicateName { task: usize, name: String },
    #[error("parameter {name:?} is compressed by both task {first} and task {second}")]
    Overlap { name: String, first: usize, second: usize },
    #[error("task {task}: a matrix view needs exactly one tensor, the group has {count}")]
    MultiTensorMatrix { task: usize, count: usize },
    #[error("task {task}: matrix view {rows}x{cols} does not fit {len} elements")]
    ViewSize {
        task: usize,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("task {task}: {source}")]
    Scheme {
        task: usize,
        #[source]
        source: SolverError,
    },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("C step of task {task} failed: {source}")]
    Solver {
        task: usize,
        #[source]
        source: SolverError,
    },
    #[error("L step {step} failed: {source}")]
    LStep {
        step: usize,
        #[source]
        source: LStepError,
    },
}
