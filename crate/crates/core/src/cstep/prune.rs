//! Pruning C steps: ℓ0/ℓ1 constraints (projections) and ℓ0/ℓ1 penalties
//! (proximal maps of `α·R(θ) + (μ/2)||u − θ||²`).

use std::cmp::Ordering;

use crate::cstep::check_finite;
use crate::cstep::form::{SparseForm, Solved};
use crate::error::SolverError;
use crate::tensor::squared_distance;

fn solved(u: &[f64], form: SparseForm) -> Solved<SparseForm> {
    let mut dense = vec![0.0; u.len()];
    form.decompress_into(&mut dense);
    let distortion = squared_distance(u, &dense);
    Solved { form, distortion }
}

/// Larger magnitude first; equal magnitudes keep the lower index first.
fn by_magnitude(u: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b))
}

/// Keeps the `kappa` largest-magnitude entries unchanged and zeroes the rest.
pub fn prune_l0_constraint(u: &[f64], kappa: usize) -> Result<Solved<SparseForm>, SolverError> {
    if kappa > u.len() {
        return Err(SolverError::KappaRange { kappa, p: u.len() });
    }
    check_finite(u)?;
    let mut idx: Vec<usize> = (0..u.len()).collect();
    if kappa > 0 && kappa < u.len() {
        idx.select_nth_unstable_by(kappa - 1, by_magnitude(u));
    }
    idx.truncate(kappa);
    idx.sort_unstable();
    let values = idx.iter().map(|&i| u[i]).collect();
    Ok(solved(
        u,
        SparseForm {
            len: u.len(),
            indices: idx,
            values,
        },
    ))
}

/// Euclidean projection onto `{θ : ||θ||₁ <= kappa}`.
///
/// Outside the ball the solution soft-thresholds by the `t` that puts the
/// result exactly on the sphere; `t` is found by sorting the magnitudes and
/// scanning for the last prefix still above its running threshold.
pub fn prune_l1_constraint(u: &[f64], kappa: f64) -> Result<Solved<SparseForm>, SolverError> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(SolverError::NegativeRadius(kappa));
    }
    check_finite(u)?;
    let l1: f64 = u.iter().map(|x| x.abs()).sum();
    if l1 <= kappa {
        return Ok(solved(u, SparseForm::from_dense(u)));
    }
    let t = l1_threshold(u, kappa);
    let dense: Vec<f64> = u.iter().map(|&x| soft(x, t)).collect();
    Ok(solved(u, SparseForm::from_dense(&dense)))
}

/// Threshold `t >= 0` with `Σ max(|u_i| − t, 0) = kappa`, assuming `||u||₁ > kappa`.
fn l1_threshold(u: &[f64], kappa: f64) -> f64 {
    let mut mags: Vec<f64> = u.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    // the largest magnitude always survives unless kappa is zero
    let mut t = mags[0] - kappa;
    for (j, &m) in mags.iter().enumerate() {
        sum += m;
        let cand = (sum - kappa) / (j + 1) as f64;
        if m - cand > 0.0 {
            t = cand;
        } else {
            break;
        }
    }
    t.max(0.0)
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn check_penalty(alpha: f64, mu: f64) -> Result<(), SolverError> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(SolverError::NegativePenalty(alpha));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(SolverError::NonPositiveMu(mu));
    }
    Ok(())
}

/// Minimizer of `α·||θ||₀ + (μ/2)||u − θ||²`: hard threshold at `sqrt(2α/μ)`.
/// An entry exactly at the threshold is pruned.
pub fn prune_l0_penalty(u: &[f64], alpha: f64, mu: f64) -> Result<Solved<SparseForm>, SolverError> {
    check_penalty(alpha, mu)?;
    check_finite(u)?;
    let thresh_sq = 2.0 * alpha / mu;
    let (indices, values) = u
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0 && x * x > thresh_sq)
        .map(|(i, &x)| (i, x))
        .unzip();
    Ok(solved(
        u,
        SparseForm {
            len: u.len(),
            indices,
            values,
        },
    ))
}

/// Minimizer of `α·||θ||₁ + (μ/2)||u − θ||²`: soft threshold at `α/μ`.
pub fn prune_l1_penalty(u: &[f64], alpha: f64, mu: f64) -> Result<Solved<SparseForm>, SolverError> {
    check_penalty(alpha, mu)?;
    check_finite(u)?;
    let t = alpha / mu;
    let dense: Vec<f64> = u.iter().map(|&x| soft(x, t)).collect();
    Ok(solved(u, SparseForm::from_dense(&dense)))
}
