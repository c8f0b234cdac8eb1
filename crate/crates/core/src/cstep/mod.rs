//! Compression mappings `Π(u) = argmin_Θ ||u − Δ(Θ)||²` and their
//! decompressions.
//!
//! Solvers see only the shifted target `u`; the engine folds the multipliers
//! in before calling them.

pub mod additive;
pub mod form;
pub mod lowrank;
pub mod prune;
pub mod quantize;
pub mod scheme;

pub use additive::{additive_cstep, AdditiveOptions, AdditiveOutcome};
pub use form::{AdditiveForm, CompressedForm, LowRankForm, QuantizedForm, Solved, SparseForm};
pub use lowrank::{lowrank_fixed, rank_select, CostKind, CostModel, RankChoice};
pub use prune::{prune_l0_constraint, prune_l0_penalty, prune_l1_constraint, prune_l1_penalty};
pub use quantize::{binarize_fixed, binarize_scaled, quantize_dp, quantize_lloyd, ternarize_scaled};
pub use scheme::{CompressionInput, QuantSolver, Scheme, SchemeSpec};

use crate::error::{SolverError, TensorError};

pub(crate) fn check_finite(u: &[f64]) -> Result<(), SolverError> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite.into())
    }
}
