use serde::{Deserialize, Serialize};

use crate::cstep::additive::{additive_cstep, AdditiveOptions};
use crate::cstep::form::{CompressedForm, Solved};
use crate::cstep::lowrank::{lowrank_fixed, rank_select, CostModel};
use crate::cstep::prune::{prune_l0_constraint, prune_l0_penalty, prune_l1_constraint, prune_l1_penalty};
use crate::cstep::quantize::{
    binarize_fixed, binarize_scaled, quantize_dp, quantize_lloyd, quantize_lloyd_from, ternarize_scaled,
};
use crate::error::SolverError;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// How adaptive quantization solves its k-means problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum QuantSolver {
    /// Exact dynamic programming.
    #[default]
    Dp,
    /// Lloyd iterations from a seeded k-means++ start.
    Lloyd { seed: u64 },
}

/// One compression scheme applied to a single view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scheme {
    AdaptiveQuantization {
        k: usize,
        #[serde(default)]
        solver: QuantSolver,
    },
    BinarizeFixed,
    BinarizeScaled,
    TernarizeScaled,
    L0Constraint {
        kappa: usize,
    },
    L1Constraint {
        kappa: f64,
    },
    L0Penalty {
        alpha: f64,
    },
    L1Penalty {
        alpha: f64,
    },
    LowRank {
        rank: usize,
    },
    RankSelect {
        alpha: f64,
        cost: CostModel,
    },
}

/// The vector a scheme compresses, with the matrix shape when the view has one.
#[derive(Clone, Copy, Debug)]
pub struct CompressionInput<'a> {
    pub values: &'a [f64],
    pub dims: Option<(usize, usize)>,
}

impl<'a> CompressionInput<'a> {
    pub fn vector(values: &'a [f64]) -> Self {
        Self { values, dims: None }
    }

    pub fn matrix(values: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self {
            values,
            dims: Some((rows, cols)),
        }
    }

    fn as_matrix(&self) -> Result<Tensor, SolverError> {
        let (r, c) = self.dims.ok_or(SolverError::NeedsMatrix)?;
        Ok(Tensor::matrix(r, c, self.values.to_vec())?)
    }
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AdaptiveQuantization { .. } => "adaptive_quantization",
            Self::BinarizeFixed => "binarize_fixed",
            Self::BinarizeScaled => "binarize_scaled",
            Self::TernarizeScaled => "ternarize_scaled",
            Self::L0Constraint { .. } => "l0_constraint",
            Self::L1Constraint { .. } => "l1_constraint",
            Self::L0Penalty { .. } => "l0_penalty",
            Self::L1Penalty { .. } => "l1_penalty",
            Self::LowRank { .. } => "low_rank",
            Self::RankSelect { cost, .. } => match cost.kind {
                crate::cstep::CostKind::Storage => "rank_select_storage",
                crate::cstep::CostKind::Flops => "rank_select_flops",
            },
        }
    }

    /// Whether the C step carries a penalty term and therefore depends on `μ`.
    pub fn is_penalty(&self) -> bool {
        matches!(self, Self::L0Penalty { .. } | Self::L1Penalty { .. } | Self::RankSelect { .. })
    }

    /// Checks the scheme parameters against a view of `len` elements.
    pub fn validate(&self, len: usize, dims: Option<(usize, usize)>) -> Result<(), SolverError> {
        match *self {
            Self::AdaptiveQuantization { k, .. } if k == 0 || k > len => {
                Err(SolverError::CodebookSize { k, p: len })
            }
            Self::L0Constraint { kappa } if kappa > len => Err(SolverError::KappaRange { kappa, p: len }),
            Self::L1Constraint { kappa } if !(kappa >= 0.0) || !kappa.is_finite() => {
                Err(SolverError::NegativeRadius(kappa))
            }
            Self::L0Penalty { alpha } | Self::L1Penalty { alpha } if !(alpha >= 0.0) || !alpha.is_finite() => {
                Err(SolverError::NegativePenalty(alpha))
            }
            Self::RankSelect { alpha, .. } if !(alpha >= 0.0) || !alpha.is_finite() => {
                Err(SolverError::NegativePenalty(alpha))
            }
            Self::LowRank { rank } => {
                let (r, c) = dims.ok_or(SolverError::NeedsMatrix)?;
                if rank > r.min(c) {
                    Err(SolverError::RankRange {
                        rank,
                        max: r.min(c),
                    })
                } else {
                    Ok(())
                }
            }
            Self::RankSelect { .. } => dims.map(|_| ()).ok_or(SolverError::NeedsMatrix),
            _ => Ok(()),
        }
    }

    /// Solves `min_Θ ||u − Δ(Θ)||²` (plus `(2/μ)·penalty` for penalty forms).
    ///
    /// `warm` is the previous solution for this view. Exact solvers ignore it;
    /// Lloyd also runs from the previous codebook and keeps the better result so
    /// that successive C steps never increase the objective.
    pub fn compress(
        &self,
        input: CompressionInput<'_>,
        mu: f64,
        warm: Option<&CompressedForm>,
    ) -> Result<Solved<CompressedForm>, SolverError> {
        let u = input.values;
        Ok(match *self {
            Self::AdaptiveQuantization { k, solver } => match solver {
                QuantSolver::Dp => quantize_dp(u, k)?.erase(),
                QuantSolver::Lloyd { seed } => {
                    let fresh = quantize_lloyd(u, k, &mut Prng::new(seed))?;
                    match warm {
                        Some(CompressedForm::Quantized(prev)) => {
                            let warmed = quantize_lloyd_from(u, &prev.codebook)?;
                            if warmed.distortion < fresh.distortion {
                                warmed.erase()
                            } else {
                                fresh.erase()
                            }
                        }
                        _ => fresh.erase(),
                    }
                }
            },
            Self::BinarizeFixed => binarize_fixed(u)?.erase(),
            Self::BinarizeScaled => binarize_scaled(u)?.erase(),
            Self::TernarizeScaled => ternarize_scaled(u)?.erase(),
            Self::L0Constraint { kappa } => prune_l0_constraint(u, kappa)?.erase(),
            Self::L1Constraint { kappa } => prune_l1_constraint(u, kappa)?.erase(),
            Self::L0Penalty { alpha } => prune_l0_penalty(u, alpha, mu)?.erase(),
            Self::L1Penalty { alpha } => prune_l1_penalty(u, alpha, mu)?.erase(),
            Self::LowRank { rank } => lowrank_fixed(&input.as_matrix()?, rank)?.erase(),
            Self::RankSelect { alpha, cost } => rank_select(&input.as_matrix()?, alpha, mu, &cost)?.solved.erase(),
        })
    }

    /// The penalty term `α·R(Θ)` of a penalty form; zero for constraint forms.
    pub fn penalty(&self, form: &CompressedForm) -> f64 {
        match (self, form) {
            (Self::L0Penalty { alpha }, CompressedForm::Sparse(s)) => {
                alpha * s.values.iter().filter(|&&v| v != 0.0).count() as f64
            }
            (Self::L1Penalty { alpha }, CompressedForm::Sparse(s)) => alpha * s.l1_norm(),
            (Self::RankSelect { alpha, cost }, CompressedForm::LowRank(l)) => {
                alpha * cost.cost(l.rank, l.rows, l.cols)
            }
            _ => 0.0,
        }
    }

    /// C-step objective scaled to distortion units: `||u − Δ(Θ)||² + (2/μ)·penalty`.
    pub fn objective(&self, distortion: f64, form: &CompressedForm, mu: f64) -> f64 {
        if self.is_penalty() {
            distortion + 2.0 / mu * self.penalty(form)
        } else {
            distortion
        }
    }
}

/// What a task compresses its view with: one scheme or an additive list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeSpec {
    Single(Scheme),
    Additive(Vec<Scheme>),
}

impl SchemeSpec {
    pub fn schemes(&self) -> &[Scheme] {
        match self {
            Self::Single(s) => std::slice::from_ref(s),
            Self::Additive(v) => v,
        }
    }

    pub fn validate(&self, len: usize, dims: Option<(usize, usize)>) -> Result<(), SolverError> {
        if let Self::Additive(v) = self {
            if v.len() < 2 {
                return Err(SolverError::TooFewComponents(v.len()));
            }
        }
        self.schemes().iter().try_for_each(|s| s.validate(len, dims))
    }

    pub fn compress(
        &self,
        input: CompressionInput<'_>,
        mu: f64,
        warm: Option<&CompressedForm>,
    ) -> Result<Solved<CompressedForm>, SolverError> {
        match self {
            Self::Single(s) => s.compress(input, mu, warm),
            Self::Additive(v) => {
                let warm = match warm {
                    Some(CompressedForm::Additive(a)) => Some(a),
                    _ => None,
                };
                let out = additive_cstep(input, v, mu, &AdditiveOptions::default(), warm)?;
                Ok(Solved {
                    form: out.form.into(),
                    distortion: out.distortion,
                })
            }
        }
    }

    pub fn penalty(&self, form: &CompressedForm) -> f64 {
        match (self, form) {
            (Self::Single(s), f) => s.penalty(f),
            (Self::Additive(v), CompressedForm::Additive(a)) => {
                v.iter().zip(&a.components).map(|(s, c)| s.penalty(c)).sum()
            }
            _ => 0.0,
        }
    }

    pub fn is_penalty(&self) -> bool {
        self.schemes().iter().any(Scheme::is_penalty)
    }

    pub fn objective(&self, distortion: f64, form: &CompressedForm, mu: f64) -> f64 {
        if self.is_penalty() {
            distortion + 2.0 / mu * self.penalty(form)
        } else {
            distortion
        }
    }

    pub fn name(&self) -> String {
        self.schemes().iter().map(Scheme::name).collect::<Vec<_>>().join("+")
    }
}

impl From<Scheme> for SchemeSpec {
    fn from(s: Scheme) -> Self {
        Self::Single(s)
    }
}
