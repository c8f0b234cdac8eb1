//! Model compression with the learning-compression (LC) algorithm.
//!
//! A compression problem is a set of [`engine::CompressionTask`]s, each
//! mapping a group of model parameters through a view to a scheme
//! (quantization, pruning, low rank, or a sum of these). [`engine::run`]
//! alternates training steps on the model with exact compression steps
//! until the weights and their compressed version agree.

// `!(x >= 0.0)` is how argument checks here reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cstep;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod report;
pub mod rng;
pub mod tensor;

pub use cstep::{CompressedForm, CompressionInput, QuantSolver, Scheme, SchemeSpec};
pub use engine::{
    run, validate_tasks, CompressionTask, EngineState, EvalResult, Mode, Plan, RunOptions, RunOutcome, ScheduleSpec,
    StepRecord, ViewKind,
};
pub use error::{CheckpointError, DatasetError, EngineError, LStepError, SolverError, TensorError, ValidationError};
pub use model::{Dataset, LossModel, MlpModel, ParamStore, QuadraticModel};
pub use report::{Checkpoint, RunReport};
pub use rng::Prng;
pub use tensor::Tensor;
