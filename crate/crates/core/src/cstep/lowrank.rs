//! Low-rank C steps: truncated SVD at a fixed rank, and rank selection under a
//! per-layer cost.

use serde::{Deserialize, Serialize};

use crate::cstep::form::{LowRankForm, Solved};
use crate::error::SolverError;
use crate::linalg::{svd, SvdResult};
use crate::tensor::{squared_distance, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Storage,
    Flops,
}

/// `C(r) = coefficient · r · (m + n)`.
///
/// A rank-`r` factorization of an `m×n` layer stores `r(m+n)` numbers and
/// applies in `r(m+n)` multiply-adds per input, so both kinds share the shape
/// and differ only in the coefficient the caller assigns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostKind,
    pub coefficient: f64,
}

impl CostModel {
    pub fn storage() -> Self {
        Self {
            kind: CostKind::Storage,
            coefficient: 1.0,
        }
    }

    pub fn flops() -> Self {
        Self {
            kind: CostKind::Flops,
            coefficient: 1.0,
        }
    }

    pub fn cost(&self, rank: usize, rows: usize, cols: usize) -> f64 {
        self.coefficient * (rank * (rows + cols)) as f64
    }
}

/// Splits `σ` between the factors as `U·diag(σ)` and `V`.
fn factors(s: &SvdResult, rows: usize, cols: usize, r: usize) -> LowRankForm {
    let k = s.s.len();
    let mut u = Vec::with_capacity(rows * r);
    for i in 0..rows {
        for t in 0..r {
            u.push(s.u.data()[i * k + t] * s.s[t]);
        }
    }
    let mut v = Vec::with_capacity(cols * r);
    for j in 0..cols {
        for t in 0..r {
            v.push(s.v.data()[j * k + t]);
        }
    }
    LowRankForm {
        rows,
        cols,
        rank: r,
        u,
        v,
    }
}

fn finish(w: &Tensor, form: LowRankForm) -> Solved<LowRankForm> {
    let mut dense = vec![0.0; form.rows * form.cols];
    form.decompress_into(&mut dense);
    let distortion = squared_distance(w.data(), &dense);
    Solved { form, distortion }
}

/// Best rank-`r` approximation of `w` in Frobenius norm.
pub fn lowrank_fixed(w: &Tensor, r: usize) -> Result<Solved<LowRankForm>, SolverError> {
    let (m, n) = w.dims2().map_err(|_| SolverError::NeedsMatrix)?;
    let max = m.min(n);
    if r > max {
        return Err(SolverError::RankRange { rank: r, max });
    }
    let s = svd(w)?;
    Ok(finish(w, factors(&s, m, n, r)))
}

/// Result of [`rank_select`], with the value of the enumerated objective.
#[derive(Clone, Debug, PartialEq)]
pub struct RankChoice {
    pub solved: Solved<LowRankForm>,
    pub rank: usize,
    pub objective: f64,
}

/// Minimizes `λ·C(r) + (μ/2)·Σ_{i>r} σ_i²` over `r ∈ 0..=min(m, n)` and returns
/// the truncated SVD at the minimizing rank. Ties go to the smaller rank.
pub fn rank_select(w: &Tensor, lambda: f64, mu: f64, cost: &CostModel) -> Result<RankChoice, SolverError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SolverError::NegativePenalty(lambda));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(SolverError::NonPositiveMu(mu));
    }
    let (m, n) = w.dims2().map_err(|_| SolverError::NeedsMatrix)?;
    let s = svd(w)?;
    let objectives = rank_objectives(&s.s, lambda, mu, |r| cost.cost(r, m, n));
    let (rank, objective) = objectives
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (r, v)| if v < best.1 { (r, v) } else { best });
    Ok(RankChoice {
        solved: finish(w, factors(&s, m, n, rank)),
        rank,
        objective,
    })
}

/// Objective value for every rank `0..=k`; tails are accumulated from the
/// smallest singular value so the full-rank tail is exactly zero.
pub fn rank_objectives(sigma: &[f64], lambda: f64, mu: f64, cost: impl Fn(usize) -> f64) -> Vec<f64> {
    let k = sigma.len();
    let mut tails = vec![0.0; k + 1];
    for r in (0..k).rev() {
        tails[r] = tails[r + 1] + sigma[r] * sigma[r];
    }
    (0..=k).map(|r| lambda * cost(r) + 0.5 * mu * tails[r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    fn diag321() -> Tensor {
        let mut a = Tensor::zeros(&[3, 3]);
        a.set2(0, 0, 3.0);
        a.set2(1, 1, 2.0);
        a.set2(2, 2, 1.0);
        a
    }

    fn random(rng: &mut Prng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn fixed_rank_diagonal() {
        let s = lowrank_fixed(&diag321(), 2).unwrap();
        assert!((s.distortion - 1.0).abs() <= 1e-12);
        assert_eq!(s.form.rank, 2);
    }

    #[test]
    fn full_rank_is_lossless() {
        let mut rng = Prng::new(2);
        let w = random(&mut rng, 6, 4);
        let s = lowrank_fixed(&w, 4).unwrap();
        assert!(s.distortion <= 1e-10 * w.frobenius_norm().powi(2));
    }

    #[test]
    fn random_matches_tail() {
        let mut rng = Prng::new(4);
        let w = random(&mut rng, 8, 5);
        let sv = svd(&w).unwrap();
        let s = lowrank_fixed(&w, 2).unwrap();
        let tail = sv.s[2].powi(2) + sv.s[3].powi(2) + sv.s[4].powi(2);
        assert!((s.distortion - tail).abs() <= 1e-8);
    }

    #[test]
    fn rank_errors() {
        let w = Tensor::zeros(&[3, 2]);
        assert_eq!(lowrank_fixed(&w, 3).unwrap_err(), SolverError::RankRange { rank: 3, max: 2 });
        assert_eq!(lowrank_fixed(&Tensor::zeros(&[4]), 1).unwrap_err(), SolverError::NeedsMatrix);
        assert!(rank_select(&w, 1.0, 0.0, &CostModel::storage()).is_err());
    }

    #[test]
    fn rank_select_hand_enumeration() {
        // C(r) = 6r on a 3x3 layer; costs r=0:14, r=1:11, r=2:13, r=3:18
        let c = rank_select(&diag321(), 1.0, 2.0, &CostModel::storage()).unwrap();
        assert_eq!(c.rank, 1);
        assert!((c.objective - 11.0).abs() <= 1e-12);
        let objs = rank_objectives(&[3.0, 2.0, 1.0], 1.0, 2.0, |r| 6.0 * r as f64);
        assert_eq!(objs, vec![14.0, 11.0, 13.0, 18.0]);
    }

    #[test]
    fn rank_select_extremes() {
        let mut rng = Prng::new(6);
        let w = random(&mut rng, 5, 4);
        let free = rank_select(&w, 0.0, 1.0, &CostModel::storage()).unwrap();
        assert_eq!(free.rank, 4);
        let pricey = rank_select(&w, 1e12, 1.0, &CostModel::flops()).unwrap();
        assert_eq!(pricey.rank, 0);
        assert!(CompressedFormExt::dense(&pricey.solved.form).iter().all(|&x| x == 0.0));

        // zero tail beyond the true rank: λ=0 keeps the smallest exact rank
        let low = crate::tensor::matmul(&random(&mut rng, 5, 2), &random(&mut rng, 2, 4)).unwrap();
        let sv = svd(&low).unwrap();
        let choice = rank_select(&low, 0.0, 1.0, &CostModel::storage()).unwrap();
        let expected = (0..=4).find(|&r| sv.s[r..].iter().all(|&s| s == 0.0)).unwrap();
        assert_eq!(choice.rank, expected);
    }

    trait CompressedFormExt {
        fn dense(&self) -> Vec<f64>;
    }

    impl CompressedFormExt for LowRankForm {
        fn dense(&self) -> Vec<f64> {
            let mut out = vec![0.0; self.rows * self.cols];
            self.decompress_into(&mut out);
            out
        }
    }
}
